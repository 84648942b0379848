import io

import numpy as np
import pytest

from battmpc import market


def fr_csv(hours, S, value=0.0, skip=None, override=None):
    lines = ["hour,step,alpha"]
    for h in range(1, hours + 1):
        for s in range(1, S + 1):
            if skip == (h, s):
                continue
            v = override[1] if override and override[0] == (h, s) else value
            lines.append(f"{h},{s},{v}")
    return "\n".join(lines) + "\n"


def test_hour_of_zeros():
    alpha = market.load_fr_signal(io.StringIO(fr_csv(1, 1800)))
    assert alpha.shape == (1, 1800)
    assert not alpha.any()


def test_out_of_range_alpha():
    with pytest.raises(market.RangeError):
        market.load_fr_signal(io.StringIO(fr_csv(1, 4, override=((1, 3), 1.5))))


def test_gap_names_hour_and_step():
    with pytest.raises(market.GapError, match=r"hour 2.*step 3|step 3.*hour 2"):
        market.load_fr_signal(io.StringIO(fr_csv(3, 5, skip=(2, 3))))


def test_parse_error():
    with pytest.raises(market.ParseError):
        market.load_fr_signal(io.StringIO("hour,step,alpha\n1,1,abc\n"))
    with pytest.raises(market.ParseError):
        market.load_fr_signal(io.StringIO("h,s,a\n1,1,0\n"))


def price_csv(rows):
    return "hour,fr_price,energy_price\n" + "".join(f"{h},{f},{e}\n" for h, f, e in rows)


def test_prices_24_rows():
    fr, en = market.load_prices(io.StringIO(price_csv([(h, 20.0, 30.0) for h in range(1, 25)])))
    assert fr.shape == en.shape == (24,)


def test_negative_energy_price_allowed():
    fr, en = market.load_prices(io.StringIO(price_csv([(1, 10.0, -5.0)])))
    assert en[0] == -5.0


def test_negative_fr_price_rejected():
    with pytest.raises(market.MarketDataError):
        market.load_prices(io.StringIO(price_csv([(1, -1.0, 5.0)])))


def test_duplicate_hour_rejected():
    with pytest.raises(market.AlignmentError):
        market.load_prices(io.StringIO(price_csv([(1, 1.0, 5.0), (1, 2.0, 5.0)])))


def test_misaligned_hours(tmp_path):
    (tmp_path / "fr.csv").write_text(fr_csv(2, 3))
    (tmp_path / "p.csv").write_text(price_csv([(1, 1.0, 1.0)]))
    with pytest.raises(market.AlignmentError):
        market.load(tmp_path / "fr.csv", tmp_path / "p.csv")


def test_window_first_hour(day):
    a, f, e = market.window(day, 0, 1)
    assert np.array_equal(a[0], day.alpha[0])
    assert f[0] == day.fr_price[0] and e[0] == day.energy_price[0]


def test_window_wraps(day):
    Y = day.hours
    a, f, _ = market.window(day, Y - 1, 2)
    assert np.array_equal(a[0], day.alpha[Y - 1])
    assert np.array_equal(a[1], day.alpha[0])
    assert f.tolist() == [day.fr_price[Y - 1], day.fr_price[0]]


@pytest.mark.parametrize("t", [0, 7, 23, 40])
def test_window_slicing_identity(day, t):
    N = 5
    a, f, e = market.window(day, t, N)
    parts = [market.window(day, t + k, 1) for k in range(N)]
    assert np.array_equal(a, np.concatenate([p[0] for p in parts]))
    assert np.array_equal(f, np.concatenate([p[1] for p in parts]))
    assert np.array_equal(e, np.concatenate([p[2] for p in parts]))
    assert a.shape == (N, day.steps)


def test_window_rejects_empty_horizon(day):
    with pytest.raises(ValueError):
        market.window(day, 0, 0)


def test_synthetic_is_reproducible():
    assert np.array_equal(market.synth_fr(5, 3), market.synth_fr(5, 3))
    assert not np.array_equal(market.synth_fr(5, 3), market.synth_fr(6, 3))
    a, b = market.synthetic(2, 4), market.synthetic(2, 4)
    assert np.array_equal(a.alpha, b.alpha)
    assert np.array_equal(a.fr_price, b.fr_price)
    assert np.array_equal(a.energy_price, b.energy_price)


def test_synthetic_range_and_means():
    alpha = market.synth_fr(2024, 1000, 360)
    assert np.all(np.abs(alpha) <= 1.0)
    means = np.abs(alpha.mean(axis=1))
    assert np.mean(means <= 0.2) >= 0.95
    # occasional saturation
    assert np.any(np.abs(alpha) == 1.0)


def test_roundtrip_bit_exact(tmp_path, day):
    fr_path, price_path = market.save(day, tmp_path)
    back = market.load(fr_path, price_path)
    assert np.array_equal(back.alpha, day.alpha)
    assert np.array_equal(back.fr_price, day.fr_price)
    assert np.array_equal(back.energy_price, day.energy_price)


def test_data_is_immutable(day):
    with pytest.raises(ValueError):
        day.alpha[0, 0] = 0.5
