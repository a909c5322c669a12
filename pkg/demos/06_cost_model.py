"""
Wall-time model
===============

At 1 ms per circuit, parameter shift over 10^4 parameters already takes more
than a day, while a polylog backpropagation cost stays in hours.
"""
from gentlegrad.bench import cost_model_table, paramshift_crossover

for M, t_ps, t_bp in cost_model_table(1e-3, [10, 100, 1000, 10_000, 100_000]):
    print(f"M={M:>6}  parameter shift {t_ps / 86400:10.4f} days   backprop {t_bp / 86400:8.4f} days")

print("parameter shift passes one hour at M =", paramshift_crossover(1e-3, 3600.0))
