// Prices a call on S with and without the arbitrage cost and shows how the
// adjusted rate moves with c.
#include <cstdio>

#include "arbcost/arbcost.hpp"

int main() {
    using namespace arbcost;
    const double horizon = 1.0;
    const std::size_t steps = 400;

    std::printf("%6s %10s %10s %10s %10s\n", "c", "r*", "sigma*", "q_up", "call");
    for (double c : {0.0, 0.25, 0.5, 1.0, 2.0}) {
        const MarketParams p{0.05, 0.2, 0.03, 0.1, c};
        const auto a = adjusted_params(p);
        const auto tree = build_tree(100.0, 100.0, p, horizon / steps, steps);
        const auto res = price_contract(tree, Payoff::call(100.0), Discounting::simple(a.r_star));
        std::printf("%6.2f %10.6f %10.6f %10.6f %10.5f\n", c, a.r_star, a.sigma_star, res.q.q_up, res.price);
    }

    const double bs = bs_price(100.0, {100.0, horizon, OptionKind::call}, 0.01, 0.2);
    std::printf("Black-Scholes at r = 0.01, vol = 0.2: %.5f\n", bs);
}
