"""Physical constants and acquisition defaults used across the package."""

# Proton gyromagnetic ratio over 2*pi, Hz per tesla (CODATA).
GAMMA_HZ_PER_TESLA = 42.577478e6

# Relaxometric constant linking |chi_para| + |chi_dia| to R2', Hz/ppm.
DEFAULT_DR_HZ_PER_PPM = 114.0

DEFAULT_B0_TESLA = 3.0

# Six gradient-echo echo times, seconds (7.70 ms first echo, 5.03 ms spacing).
DEFAULT_GRE_TES = (0.00770, 0.01273, 0.01776, 0.02279, 0.02782, 0.03285)

# Six spin-echo echo times, seconds.
DEFAULT_SE_TES = (0.015, 0.030, 0.045, 0.060, 0.075, 0.090)

DEFAULT_PATCH_SIZE = 64
DEFAULT_PATCH_OVERLAP = 40

DEFAULT_LEARNING_RATE = 3e-4
DEFAULT_LR_STEP_SIZE = 1000
DEFAULT_LR_GAMMA = 0.98
