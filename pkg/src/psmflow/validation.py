"""Small self-checking validation cases used by ``psmflow validate``."""

from __future__ import annotations

import math

import numpy as np

from . import lbm
from .config import preset
from .dem import Particle, sphere_volume
from .psm import SubBlockRegistry, build_fraction_field


def poiseuille(width: int = 32, tau: float = 0.8, g: float = 1e-6, max_steps: int = 40000, tol: float = 0.01) -> dict:
    """Body-force channel; centerline velocity against ``g y (W - y) / (2 nu)``."""
    shape = (1, width, 1)
    bc = lbm.BoundarySpec({"x-": "periodic", "x+": "periodic", "y-": "noslip", "y+": "noslip",
                           "z-": "periodic", "z+": "periodic"})
    params = lbm.FluidParams(tau, (g, 0.0, 0.0))
    fld = lbm.PdfField(shape)
    fld.set_equilibrium()
    rho = np.empty(shape)
    u = np.empty((3,) + shape)
    prev = None
    for step in range(max_steps):
        lbm.lbm_step(fld, params, bc, rho, u)
        if step % 1000 == 0:
            cur = u[0, 0, width // 2, 0]
            if prev is not None and abs(cur - prev) < 1e-9 * abs(cur):
                break
            prev = cur
    y = np.arange(width) + 0.5
    exact = g / (2.0 * params.nu) * y * (width - y)
    i = int(np.argmax(exact))
    err = abs(u[0, 0, i, 0] - exact[i]) / exact[i]
    return {"case": "poiseuille", "centerline": float(u[0, 0, i, 0]), "analytic": float(exact[i]),
            "rel_error": float(err), "passed": bool(err < tol)}


def mapping(radius: float = 10.0, tol: float = 0.01) -> dict:
    """Summed overlap fractions of one sphere against its volume."""
    n = int(2 * radius + 4)
    p = Particle.from_density(0, np.full(3, n / 2.0 + 0.123), radius, 1.0)
    reg = SubBlockRegistry((n, n, n), (0, 0, 0)).update([p])
    vol = build_fraction_field(reg).particle_volume(0)
    ref = sphere_volume(radius)
    err = abs(vol - ref) / ref
    return {"case": "mapping", "volume": float(vol), "analytic": ref, "rel_error": float(err), "passed": bool(err < tol)}


def schiller_naumann_re(galileo: float) -> float:
    """Terminal Re solving ``Ga^2 = 18 Re (1 + 0.15 Re^0.687)`` by bisection."""
    lo, hi = 0.0, max(1.0, galileo**2)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 18.0 * mid * (1.0 + 0.15 * mid**0.687) < galileo**2:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def settling(steps: int | None = None, domain=None, tau: float | None = None, tol: float = 0.15, log_every=0) -> dict:
    """Single sphere settling under gravity; terminal Re against the Schiller-Naumann correlation."""
    from .config import build_scenario

    over = {}
    if domain is not None:
        over["domain"] = list(domain)
    if tau is not None:
        over["fluid"] = {"tau": tau}
    cfg = preset("settling_sphere", **over)
    steps = cfg.run.steps if steps is None else steps
    sc = build_scenario(cfg)
    sim = sc.simulation()
    d = 2.0 * cfg.particles.radius
    speed = []
    try:
        for s in range(steps):
            sim.step()
            speed.append(-sim.particles()[0].u[2])
            if log_every and s % log_every == 0:
                print(f"step {s} Re {speed[-1] * d / sc.fluid.nu:.4f}", flush=True)
    finally:
        sim.close()
    speed = np.array(speed)
    tail = speed[int(math.floor(0.8 * steps)):]
    drift = float((tail.max() - tail.min()) / abs(tail.mean()))
    re = float(tail[-1] * d / sc.fluid.nu)
    ref = schiller_naumann_re(cfg.physics.galileo)
    err = abs(re - ref) / ref
    return {"case": "settling", "reynolds": re, "schiller_naumann": ref, "rel_error": float(err), "drift": drift,
            "passed": bool(err < tol and drift < 0.01)}


CASES = {"poiseuille": poiseuille, "mapping": mapping, "settling": settling}
