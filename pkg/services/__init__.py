"""Services layer -- HJB and Fokker-Planck solvers, spillover networks, equilibrium, micro-simulation."""
