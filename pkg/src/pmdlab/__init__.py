"""Policy mirror descent with linear TD critics on entropy-regularised finite MDPs."""
from .actor import ActorConfig, gtilde_objective, mirror_step
from .critic import (AssumptionError, CriticState, FeatureMap, StepSizeCertificate, approx_q_and_advantage,
                     build_certificate, exact_theta, msbe_and_semigradient, td_step)
from .driver import RunConfig, RunTrace, Schedule, m_schedule, run_actor_critic, schedule_constant
from .mdp import FiniteMdp, PolicyLogits, kl_divergences, log_density, validate_mdp
from .oracle import evaluate_policy, bellman_apply, occupancies, performance_difference, solve_optimal
from .verifier import check_critic, check_stability, check_value_and_rates, concentrability, verify

__version__ = "0.1.0"
