"""Reference values frozen from ``scripts/freeze_oracles.py`` (mpmath, 40 digits)."""

DIAG_COSINE = 0.70710678118654752
MARGIN_AT_HALF = 0.023596585290909477
MARGIN_AT_ZERO = -0.47942553860420300
K_AT_0_2 = 0.88079707797788244
K_AT_0_3 = 0.95257412682243322
N2_BLEND = 0.52384058440442351
BINARY_CE_10 = 4.5398899216864647e-5
PLAIN_CE_1_8 = 0.15297761052607413
EMA_0_4_0_6 = 0.58
FOLD_SLOPE_M = -0.91821681954938936
