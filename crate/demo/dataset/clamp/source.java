class Main {
    static int clamp(int x, int lo, int hi) {
        return Math.max(lo, Math.min(x, hi));
    }
}
