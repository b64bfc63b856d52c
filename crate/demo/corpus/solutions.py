import math


def clamp(x, lo, hi):
    return max(lo, min(x, hi))


def digit_sum(n):
    return sum(map(int, str(abs(n))))


def hypot(a, b):
    return math.sqrt(a * a + b * b)


def read_pair():
    a, b = map(int, input().split())
    return a, b


def largest(xs):
    return max(xs)


def report(xs):
    print(' '.join(map(str, sorted(xs))))
