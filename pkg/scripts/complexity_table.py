"""Parameter and FLOP counts for the published configurations and their planned students."""

from srsqueeze.models import ModelConfig, approx_param_count, config_param_count, estimate_flops
from srsqueeze.planner import adjust_peripherals, plan

ROWS = [
    ("EDSR_baseline", ModelConfig(64, 2, 16), 0.03),
    ("SwinIR-light (conv stand-in)", ModelConfig(60, 6, 4), 0.089),
]


def line(name, cfg):
    pc = config_param_count(cfg)
    macs = estimate_flops(cfg, 720, 1280)
    return (f"{name:<30} {str(cfg.triple):<14} {pc.total:>11,} {pc.deep:>11,} "
            f"{approx_param_count(cfg):>13,.0f} {macs / 1e9:>9.2f}")


if __name__ == "__main__":
    print(f"{'model':<30} {'(nc,nl,nb)':<14} {'params':>11} {'deep':>11} {'approx deep':>13} {'GMACs':>9}")
    for name, src, d in ROWS:
        print(line(name, src))
        for mode in ("paper_compat", "search"):
            p = plan(src, d, mode)
            print(line(f"  d={d} {mode}", adjust_peripherals(src, p.target)))
    print(line("EDSRmini", ModelConfig(16, 1, 8)))
    print("GMACs: multiply-adds for a 1280x720 output, x2")
