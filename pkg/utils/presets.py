"""
Preset experiment configurations

Desk-scale versions (N = 10^4) of the published experiment settings. Kernel
variances are listed per role: rho (sampling density), nu (support density),
l (support error estimate), m (reweighting coefficients).
"""

# Shared defaults
_COMMON = """
[weighting]
M = 10
omega0 = 0.5
truncation_radius_factor = 6.0
calibrate_variance = false
calibration_neighbors = 200

[controller]
sgd_lr = 1e-3
adam_lr_ratio = 0.1
epochs_min = 1
epochs_max = 32
epoch_growth = 2
m_change_threshold = 0.1
batch_size = 256

[mse]
learning_rate = 1e-3
max_epochs = 500
patience = 20
tolerance = 1e-6
batch_size = 256

[stopping]
window = 10
std_tolerance = 1e-6
divergence_patience = 20
max_iterations = 500
density_quantile = 0.01

[ablation]
alpha_values = 0, 0.25, 0.5, 0.75, 0.99
width_values = 8, 12, 16, 24, 32
reweighting_methods = ts, m1, m2

[output]
record_timings = false
"""

# Multistep prediction of the Lorenz system
LORENZ_PRESET = _COMMON + """
[experiment]
name = lorenz
seeds = 0, 1, 2, 3, 4
output_dir = runs/lorenz

[data]
n = 10000
lower = -25, -25, 0
upper = 25, 25, 50
alpha = 0.0
perturbation_variance = 1.0
flow_tau = 0.01
flow_substeps = 10

[model]
kind = resnet
width = 64
step_scale = 0.01

[weighting]
variance_rho = 1.0
variance_nu = 2.0
variance_l = 1.0
variance_m = 1.0
calibration_candidates = 0.25, 0.5, 1.0, 2.0

[task]
steps = 25
x0_lower = -12.5, -12.5, 12.5
x0_upper = 12.5, 12.5, 37.5

[ablation]
reweighting_alpha = 0.25
rollout_steps = 25, 50, 100
rollout_widths = 128, 1024
"""

# Tracking problem for the pendulum on a cart
TRACKING_PRESET = _COMMON + """
[experiment]
name = tracking
seeds = 0, 1, 2
output_dir = runs/tracking

[data]
n = 10000
lower = 0, -5, -11
upper = 6.283185307179586, 5, 11
clip_lower = -inf, -inf, -10
clip_upper = inf, inf, 10
alpha = 0.0

[model]
kind = fnn
width = 8

[weighting]
variance_rho = 0.01
variance_nu = 0.01
variance_l = 0.01
variance_m = 0.05
calibration_candidates = 0.005, 0.01, 0.02, 0.05

[task]
horizon = 1.0
intervals = 20
substeps = 10
control_bound = 10.0
iterations = 100
step_size = 1.0
restarts = 3
"""

# Minimum energy path with the string method
MEP_PRESET = _COMMON + """
[experiment]
name = mep
seeds = 0, 1, 2
output_dir = runs/mep

[data]
n = 10000
alpha = 0.25
perturbation_variance = 0.01
beta_inv = 1.0
langevin_dt = 1e-3
langevin_burn_in = 10000
langevin_thinning = 10
langevin_chains = 64

[model]
kind = energy
width = 32

[weighting]
variance_rho = 0.01
variance_nu = 0.001
variance_l = 0.001
variance_m = 0.01
calibration_candidates = 0.0005, 0.001, 0.002, 0.005

[task]
nodes = 41
step = 1e-2
max_iterations = 100000
tolerance = 1e-8
pin_endpoints = true

[ablation]
alpha_values = 0, 0.25, 0.5, 0.75
temperature_values = 0.1, 0.2, 1.0
"""

# One-dimensional analytic case: f*(x) = -a|x| under explicit Euler
EXAMPLE2_PRESET = _COMMON + """
[experiment]
name = example2
seeds = 0
output_dir = runs/example2

[data]
n = 10000
lower = -1
upper = 1
alpha = 0.0
field_alpha = 1.0

[model]
kind = polynomial
degree = 1

[weighting]
variance_rho = 0.001
variance_nu = 0.01
variance_l = 0.001
variance_m = 0.001
calibration_candidates = 0.0005, 0.001, 0.005

[controller]
sgd_lr = 1e-2

[task]
x0 = 1.0
steps = 20
euler_step = 0.1
"""

PRESETS = {
    "lorenz": LORENZ_PRESET,
    "tracking": TRACKING_PRESET,
    "mep": MEP_PRESET,
    "example2": EXAMPLE2_PRESET,
}
