"""
Fisher information and the regularity audit
============================================

"""

from mdev.model import Grid, check_regularity, fisher_information, get_model, rho_distance

grid = Grid(4096)

# the linear model is normalized so that I = 1; sin(theta t) at theta = 1 gives int t^2 cos^2 t
for name, theta0 in [("linear-sin", 0.0), ("nonlinear-sin", 1.0), ("ortho-2d", [0.0, 0.0])]:
    model = get_model(name)
    print(name, fisher_information(model, theta0, grid).matrix.round(8).tolist())

sine = get_model("nonlinear-sin")
print("rho(1.1, 1.0) =", rho_distance(sine, 1.1, 1.0, grid))

# residual slopes: a smooth model gives about 4, 3 and 1; the cusp |theta|^1.2 gives 2.4
for name, theta0 in [("linear-sin", 0.0), ("nonlinear-sin", 1.0), ("power-cusp", 0.0)]:
    rep = check_regularity(get_model(name), theta0, grid)
    orders = {k: (None if v is None else round(v, 3)) for k, v in rep.fitted_orders.items()}
    print(f"{name:14s} A1={rep.passes_a1} A2={rep.passes_a2} A3={rep.passes_a3} orders={orders}")
