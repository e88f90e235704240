"""Writes the synthetic price histories and option chains used by the
acceptance suite. Rerunning it reproduces the checked-in files."""

import datetime as dt
import math
import os
import random

QUOTE_DATE = dt.date(2019, 10, 22)
RATE = 0.0134


HERE = os.path.dirname(os.path.abspath(__file__))


def business_days(end, count):
    days = []
    d = end
    while len(days) < count:
        if d.weekday() < 5:
            days.append(d)
        d -= dt.timedelta(days=1)
    return days[::-1]


def write_prices(path, dates, prices):
    with open(os.path.join(HERE, path), "w", newline="\n") as f:
        f.write("date,adj_close\n")
        for d, p in zip(dates, prices):
            f.write(f"{d.isoformat()},{p:.4f}\n")


def norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bs(spot, strike, tau, r, vol, call):
    sd = vol * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (r + 0.5 * vol * vol) * tau) / sd
    d2 = d1 - sd
    df = math.exp(-r * tau)
    if call:
        return spot * norm_cdf(d1) - strike * df * norm_cdf(d2)
    return strike * df * norm_cdf(-d2) - spot * norm_cdf(-d1)


def smile(k, tau, level):
    return level + 0.04 * math.exp(-tau / 0.25) + 0.6 * k * k - 0.1 * k


def write_chain(path, spot, level, half_spread):
    rows = []
    for days in (7, 30, 60, 90, 180, 365, 730):
        tau = days / 365.0
        expiry = QUOTE_DATE + dt.timedelta(days=days)
        fwd = spot * math.exp(RATE * tau)
        for i in range(-8, 9):
            strike = round(spot * (1.0 + 0.025 * i))
            k = math.log(strike / fwd)
            vol = smile(k, tau, level)
            call = strike >= spot
            bid = bs(spot, strike, tau, RATE, vol - half_spread, call)
            ask = bs(spot, strike, tau, RATE, vol + half_spread, call)
            bid = math.floor(bid * 100.0) / 100.0
            ask = math.ceil(ask * 100.0) / 100.0
            last = round(0.5 * (bid + ask), 2)
            rows.append((expiry.isoformat(), strike, bid, ask, last, "C" if call else "P"))
    # rows the loader must reject
    rows.insert(5, ((QUOTE_DATE + dt.timedelta(days=30)).isoformat(), round(spot), 9.5, 9.1, 9.3, "C"))
    rows.insert(40, ((QUOTE_DATE - dt.timedelta(days=3)).isoformat(), round(spot), 1.0, 1.1, 1.05, "P"))
    rows.insert(77, ((QUOTE_DATE + dt.timedelta(days=60)).isoformat(), 0, 1.0, 1.1, 1.05, "C"))
    with open(os.path.join(HERE, path), "w", newline="\n") as f:
        f.write("expiry,strike,bid,ask,last,type\n")
        for r in rows:
            f.write(f"{r[0]},{r[1]},{r[2]:.2f},{r[3]:.2f},{r[4]:.2f},{r[5]}\n")


def main():
    gen = random.Random(20191022)
    dates = business_days(QUOTE_DATE, 505)
    s, v = [287.0], [289.0]
    for _ in dates[1:]:
        z = gen.gauss(0.0, 1.0)
        e = gen.gauss(0.0, 1.0)
        s.append(s[-1] * math.exp(0.0006 - 0.5 * 0.012**2 + 0.012 * z))
        v.append(v[-1] * math.exp(0.0004 - 0.5 * 0.0075**2 + 0.007 * z + 0.001 * e))
    write_prices("spy_prices.csv", dates, s)
    # IVV misses three sessions; the rolling join drops them
    keep = [i for i in range(len(dates)) if i not in (100, 101, 300)]
    write_prices("ivv_prices.csv", [dates[i] for i in keep], [v[i] for i in keep])
    write_chain("spy_chain.csv", 299.03, 0.125, 0.004)
    write_chain("ivv_chain.csv", 300.61, 0.128, 0.006)


if __name__ == "__main__":
    main()
