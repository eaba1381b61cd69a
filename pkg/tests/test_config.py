import math

import mpmath
import pytest

from atlasgan.config import (PRESETS, ConfigError, TrainConfig, config_from_ini, derive_scales, load_config,
                             preset, resolve_N)

# (n, beta, d): both sides of the beta + 1 vs d/2 rule, integer and fractional beta
TRIPLES = [
    (1024, 1.0, 2), (2000, 1.0, 2), (3000, 2.0, 3), (10_000, 1.5, 6), (10_000, 1.0, 5),
    (500, 1.0, 8), (123_457, 1.25, 7), (2, 1.0, 4), (99_999, 3.0, 9), (4096, 1.0, 4),
]


def oracle(n, beta, d):
    mpmath.mp.dps = 60
    b = mpmath.mpf(repr(beta))
    dn = mpmath.power(n, -1 / (2 * b + d))
    if beta + 1 >= mpmath.mpf(d) / 2:
        N = n
    else:
        N = int(mpmath.ceil(mpmath.power(n, (2 * b + d) / (4 * b + 2))))
    dN = mpmath.power(N, -1 / (2 * b + d))
    return float(dn), float(dN), N


@pytest.mark.parametrize("n,beta,d", TRIPLES)
def test_derive_scales_matches_high_precision(n, beta, d):
    dn, dN, N = derive_scales(n, beta, d)
    on, oN, oNN = oracle(n, beta, d)
    assert N == oNN
    assert math.isclose(dn, on, rel_tol=1e-14)
    assert math.isclose(dN, oN, rel_tol=1e-14)


def test_derive_scales_examples():
    dn, dN, N = derive_scales(1024, 1.0, 2)
    assert N == 1024 and abs(dn - 0.176777) < 1e-6 and dn == dN
    _, _, N = derive_scales(10_000, 1.5, 6)
    assert N == math.ceil(10 ** (4 * 9 / 8)) == 31623


def test_derive_scales_validation():
    for bad in [(1, 1.0, 2), (100, 0.5, 2), (100, 1.0, 1)]:
        with pytest.raises(ValueError):
            derive_scales(*bad)


def test_presets_architecture():
    s, t = preset("sphere"), preset("torus")
    assert (s.n, s.m, s.gen_L1, s.gen_L2, s.p, s.disc_L1, s.disc_L2) == (2000, 2, 3, 500, 3, 3, 2000)
    assert (t.n, t.m, t.gen_L2, t.disc_L2) == (3000, 2, 1500, 3000)
    assert set(PRESETS) == {"sphere", "torus"}
    with pytest.raises(ConfigError):
        preset("klein")


def test_ini_round_trip():
    cfg = preset("torus", seed=7, lr_gen=1.25e-3)
    back = config_from_ini(cfg.to_ini())
    assert back == cfg


def test_unknown_keys_all_listed():
    text = "[model]\nm = 3\nbogus = 1\n[train]\nsede = 4\nsurface = torus\n[extra]\nx = 1\n[eval]\nblock_size = many\n"
    with pytest.raises(ConfigError) as exc:
        config_from_ini(text)
    probs = exc.value.problems
    assert len(probs) == 5
    joined = "\n".join(probs)
    for word in ("bogus", "sede", "surface", "[extra]", "block_size"):
        assert word in joined


def test_semantic_validation_lists_everything():
    with pytest.raises(ConfigError) as exc:
        TrainConfig(p=2, d=2, penalty_warmup=2.0, block_size=8192).validate()
    assert len(exc.value.problems) == 3


def test_shipped_configs_load(tmp_path):
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("sphere", "torus"):
        cfg = load_config(root / f"{name}.ini")
        ref = preset(name)
        assert {k: v for k, v in cfg.as_dict().items() if k != "data_path"} == \
            {k: v for k, v in ref.as_dict().items() if k != "data_path"}


def test_resolve_N_default_and_override():
    assert resolve_N(preset("sphere")) == 2000
    assert resolve_N(preset("sphere", N=77)) == 77
