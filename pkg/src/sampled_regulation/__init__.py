"""Output regulation of LTI plants under aperiodic sampling.

Two architectures are supported.  In the pre-processing one, the internal
model sits before a hybrid stabilizer whose holding device generates the
intersample signal; stabilizer and holding device are designed jointly from
matrix inequalities.  In the post-processing one, a continuous stabilizer is
given and a hybrid observer reconstructs the regulated output from sporadic
samples to drive the internal model.
"""
from .exceptions import (DimensionError, FrancisError, IllConditionedError, InternalModelError,
                         LmiInfeasibleError, NotHurwitzError, RegulationError, SamplingError,
                         SimulationError, SynthesisError)
from .model import (AugmentedPost, Exosystem, ExtendedPlantPre, PlantModel, RegulatorPost,
                    RegulatorPre, SamplingSpec, build_augmented_post, build_extended_plant_pre,
                    check_neutral_stability, check_sampling_sequence, generate_sampling_sequence,
                    validate_plant)
from .francis import (FrancisSolution, build_internal_model, check_nonresonance, solve_francis,
                      solve_Z)
from .lmi import (LmiAssignment, LmiConstraint, LmiProblem, MatrixVariable, assemble_analysis_lmis,
                  assemble_observer_analysis_lmis, assemble_post_lmis, assemble_pre_lmis,
                  m2_of_tau, solve_feasibility, verify_assignment)
from .hybridsim import (ClosedLoopPost, ClosedLoopPre, HybridArc, assemble_closed_loop_post,
                        assemble_closed_loop_pre, extract_outputs, lyapunov_trace, simulate,
                        write_arc_csv)
from .verify import (CertificateReport, check_assumption4, check_hurwitz, check_property1,
                     regulation_metrics)
from .synthesis import (certify_post, certify_pre, grid_search_hyperparams, synthesize_post,
                        synthesize_pre)

__version__ = "0.1.0"
