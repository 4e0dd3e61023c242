"""netequiv: wide-band multi-port equivalents of electrical networks.

Reduce an external network to its boundary buses, identify a rational
z-domain admittance from swept waveform records, make it stable and
passive, and validate the equivalent in hybrid waveform/phasor
co-simulation against the full model.
"""

from .netmodel import (AdmittanceSampleSet, Branch, Bus, CaseError,
                       DegenerateBranchError, EliminationSingularityError,
                       Generator, NetworkCase, PartitionedY, PowerFlowSpec,
                       Source, analytic_port_admittance, build_ybus,
                       kron_reduce, merge_buses, partition_reduced)
from .coherency import (CoherentGrouping, ParticipationError,
                        group_by_participation, localness_index)
from .emt_sim import (Event, SweepRecord, SweepSpec, SweepSpecError,
                      TimeSeries, TopologyError, TrapezoidalSolver,
                      apply_events_at, frequency_sweep, simulate,
                      steady_amplitude_ratio)
from .rls_ident import (CoverageError, DivergenceError, FitResult,
                        IllConditionedError, RationalTFz, RlsState, TFMatrix,
                        batch_ls, build_regressor, enforce_stability,
                        fit_entry, fit_mimo, prediction_residuals, rls_step)
from .passivity import (EnforcementError, PassivityReport, check_passivity,
                        conductance_part, correct_sample_set, densified_grid,
                        enforce_passivity, nearest_psd, sample_admittance,
                        susceptance_part)
from .fdne_rt import (FdneRuntime, PhasorValue, RuntimeDivergenceError,
                      fdne_step, fundamental_compensation, init_steady_state)
from .tsa_if import (Machine, SlidingPhasor, aggregate_machines,
                     boundary_current, gen_bus_voltage,
                     machine_from_powerflow, phasor_extract, phasor_power,
                     phasor_to_time, swing_trapezoid, tsa_step,
                     window_samples)
from .powerflow import PowerFlowError, PowerFlowResult, solve_powerflow
from .metrics import (ComparisonReport, MetricError, TimingReport,
                      compare_series, relative_error)
from .fileio import (FormatError, load_admittance_csv, load_case, load_model,
                     load_participation_csv, load_timeseries_csv,
                     save_admittance_csv, save_case, save_grouping_csv,
                     save_model, save_passivity_csv, save_timeseries_csv)
from .hybrid import (VARIANTS, AreaSplit, HybridRunError, comparison_channels,
                     external_equivalent_case, external_partition,
                     fundamental_companion, run_hybrid, split_case)
from .pipeline import (ConfigError, PipelineError, RunConfig, load_config,
                       run_pipeline, timing_report)
from .data import data_path

__version__ = "0.1.0"
