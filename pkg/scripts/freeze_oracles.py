"""Recompute the frozen reference values in tests/oracle_values.py with mpmath.

Run it and diff the output against the checked-in file; the test suite
itself never imports mpmath.
"""

import mpmath as mp

mp.mp.dps = 40


def sig(x):
    return 1 / (1 + mp.e ** (-x))


def margined(c, m):
    return mp.cos(mp.acos(c) + m)


VALUES = {
    "DIAG_COSINE": mp.sqrt(2) / 2,
    "MARGIN_AT_HALF": margined(mp.mpf("0.5"), mp.mpf("0.5")),
    "MARGIN_AT_ZERO": margined(mp.mpf(0), mp.mpf("0.5")),
    "K_AT_0_2": sig(2),
    "K_AT_0_3": sig(3),
    "N2_BLEND": sig(2) * mp.mpf("0.5") + (1 - sig(2)) * mp.mpf("0.7"),
    "BINARY_CE_10": mp.log(1 + mp.e ** -10),
    "PLAIN_CE_1_8": mp.log(1 + mp.e ** mp.mpf("-1.8")),
    "EMA_0_4_0_6": mp.mpf("0.1") * mp.mpf("0.4") + mp.mpf("0.9") * mp.mpf("0.6"),
    "FOLD_SLOPE_M": -(mp.sin(mp.mpf("0.5")) + mp.mpf("0.5") * mp.cos(mp.mpf("0.5"))),
}

if __name__ == "__main__":
    for name, v in VALUES.items():
        print(f"{name} = {mp.nstr(v, 17, strip_zeros=False)}")
