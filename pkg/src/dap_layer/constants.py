"""Physical constants used across the toolkit.

All energies in eV, lengths in nm, rates in 1/ns unless stated otherwise.
"""

# h*c for wavelength <-> photon energy conversion (eV nm)
HC_EV_NM = 1239.84

# e^2 / (4 pi eps0), vacuum Coulomb energy scale (eV nm)
COULOMB_EV_NM = 1.43996

# atom density of diamond, used only for the impurity ppm conversion (cm^-3)
DIAMOND_ATOM_DENSITY_CM3 = 1.76e23
