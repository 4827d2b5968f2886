"""How much does the generated distribution depend on the diffusion path?

Two separately trained networks (residual and noise) are compared with the
analytic oracle. Each sampler run starts from the same terminal noise and
follows either a reshaped residual schedule (abar_t raised to a power) or
a decoupled path that removes the residual before the noise or the reverse.
Deviations are energy distances to the unmodified baseline. An exact
predictor would give zero for every variant. The sensitivities measure how
the residual estimate reacts to bbar_t and the noise estimate to abar_t.
The trained networks see only their own coefficient as time condition
(abar_t * T and bbar_t * T), so theirs are zero by construction.

    python demos/path_independence.py
"""

import os

from resdiff import cli

os.environ.setdefault(cli.OUTPUT_ROOT_ENV, "runs/demos")


def quiet(*_):
    pass


def run(command, **overrides):
    cfg = cli.load_config(command, None, {k: str(v) for k, v in overrides.items()})
    return cli.HANDLERS[command](cfg, echo=quiet)


root = os.environ[cli.OUTPUT_ROOT_ENV]
run("train", objective="SM-Res", iterations=3000, output="gauss-res")
run("train", objective="SM-N", iterations=3000, output="gauss-eps")
for predictor, extra in (("oracle", {}), ("paired", {
        "residual_checkpoint": os.path.join(root, "gauss-res", "model.npz"),
        "noise_checkpoint": os.path.join(root, "gauss-eps", "model.npz")})):
    report = run("path-experiment", predictor=predictor, n_samples=2000, output=f"paths-{predictor}", **extra)["report"]
    print(f"{predictor}: d res/d bbar {report.res_beta_sensitivity:.3f}, d eps/d abar {report.eps_alpha_sensitivity:.3f}")
    for v in report.variants:
        print(f"  {v.name:<16} energy {v.energy:.5f}  mean displacement {v.displacement:.4f}")
