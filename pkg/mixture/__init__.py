from mixture.engine import (e_step_responsibilities, m_step_beta, m_step_sigma2, mixture_weights,
                            responsibilities_from_weights)
from mixture.mixture_state import MixtureState, init_mixture_state
