"""Working tolerance ladder, stated once and referenced everywhere.

ALGEBRAIC guards identities that hold to machine precision, FD guards
finite-difference-based quantities, RITZ guards Ritz/flow cross-checks.
"""

ALGEBRAIC = 1e-12
FD = 1e-6
RITZ = 1e-4

# Eigenvalue threshold below which a Ritz value certifies instability.
CERTIFY = 1e-8
