class Main {
    static int digitSum(int n) {
        String s = String.valueOf(Math.abs(n));
        int total = 0;
        for (char c : s.toCharArray()) {
            total += Character.getNumericValue(c);
        }
        return total;
    }
}
