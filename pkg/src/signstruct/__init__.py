"""Ground states of the J1-J2 Heisenberg chain and their sign structure under
diagonal-gate positivization protocols."""

from .analysis import (
    SweepSpec,
    SweepTable,
    bipartition_masks,
    entanglement_entropy,
    positivize_degenerate_subspace,
    reference_overlap_curves,
    run_sweep,
)
from .eigensolver import ConvergenceError, NotRealError, canonicalize_real, ground_level, lowest_eigenpairs
from .hamiltonian import (
    HamiltonianIR,
    Term,
    apply_terms,
    conjugate_by_protocol,
    dense_matrix,
    even_odd_transformed,
    heisenberg_terms,
    mpr_cz_transformed,
    normalize,
)
from .lattice import Boundary, ChainModel, SectorBasis, build_chain, enumerate_sector
from .protocols import (
    Protocol,
    apply_protocol,
    mg_product_state,
    mpr_cz_protocol,
    mpr_protocol,
    named_protocol,
    odd_even_protocol,
    sign_average,
    torlai_protocol,
)
from .search import SearchConfig, brute_force_search, search_mpr_plus_cz, template_search

__version__ = "0.1.0"
