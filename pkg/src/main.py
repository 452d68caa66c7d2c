# src/main.py

import argparse
import logging
import os
import sys
from typing import Callable, Dict, List, Optional, Tuple
import numpy as np
from src.config import Config, LOG_FORMATS, configure_logging
from src.exceptions import (
    BlowupError,
    CommutativityError,
    ConfigError,
    ConvergenceError,
    EvaluationError,
    FieldEvaluationError,
    SolverError,
    ValidationError
)
from src.engines import BaseEngine, LtiEngine, LtvEngine, OracleEngine, PicardEngine
from src.engines.lti_engine import lti_transition_table
from src.engines.ltv_engine import (
    ROUTE_BASIS,
    ROUTE_COMMUTING,
    ROUTE_PEANO_BAKER,
    TableBuilder,
    commutator_check,
    peano_baker,
    semigroup_check,
    stm_by_basis_solves,
    stm_commuting,
    stm_derivative_residual
)
from src.engines.picard_engine import (
    PicardReport,
    PicardStatus,
    convergence_certificates,
    estimate_lipschitz,
    fixed_point_residual,
    flow_semigroup_residual,
    nonuniqueness_probe,
    picard_solve
)
from src.oracle import OracleConfig, rk4_solve
from src.records import TransitionTable, Trajectory
from src.report import (
    CERTIFICATES, ORACLE, PICARD, ROUTE, RUN, SEMIGROUP, SERIES, STATUS,
    RunReport, write_outputs
)
from src.run_config import RunConfig, load_run_config
from src.systems import LtiSystem, LtvSystem, NonlinearSystem

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_BLOWUP = 3

MATRIX_EXPONENTIAL = "matrix-exponential"
ROUTE_TOLERANCE = 1e-6
NONLINEAR_ROUTE_TOLERANCE = 1e-5
SEMIGROUP_TOLERANCE = 1e-8


def _sup(samples: np.ndarray) -> float:
    return float(np.abs(samples).max()) if samples.size else 0.0


def _table_gap(a: TransitionTable, b: TransitionTable) -> float:
    return float(np.max(np.linalg.norm(a.matrices - b.matrices, 2, axis=(1, 2))))


class StateSpaceRunner:
    """Executes one run config: route choice, solve, cross-checks and outputs."""

    def __init__(self, config: RunConfig, rtol: float, out_dir: str, seed: int):
        self.config = config
        self.rtol = rtol
        self.out_dir = out_dir
        self.seed = seed
        try:
            self.system = config.system.build()
        except (EvaluationError, ValidationError) as e:
            raise ConfigError(f"System cannot be built: {e}", field="system")
        self.grid = config.horizon.grid()
        self.x0 = np.asarray(config.initial, dtype=float)
        self.signal = config.input.signal()
        self.impulses = config.input.impulse_spec()
        solver = config.solver
        self.oracle_cfg = OracleConfig(substeps=solver.substeps, blowup_threshold=solver.blowup_threshold)
        self.report = RunReport()
        self.engines: Dict[str, Callable[[], BaseEngine]] = {
            MATRIX_EXPONENTIAL: lambda: LtiEngine(self._lti_system(), self.rtol),
            ROUTE_PEANO_BAKER: lambda: self._ltv_engine(ROUTE_PEANO_BAKER),
            ROUTE_COMMUTING: lambda: self._ltv_engine(ROUTE_COMMUTING),
            ROUTE_BASIS: lambda: self._ltv_engine(ROUTE_BASIS),
            "picard": lambda: PicardEngine(self.system, self.rtol, solver.max_iters, solver.blowup_threshold),
            "oracle": lambda: OracleEngine(self.system if self.nonlinear else self._ltv_system(), self.oracle_cfg),
        }

    @property
    def nonlinear(self) -> bool:
        return isinstance(self.system, NonlinearSystem)

    def _ltv_system(self) -> LtvSystem:
        return self.system.as_ltv() if isinstance(self.system, LtiSystem) else self.system

    def _lti_system(self) -> LtiSystem:
        if isinstance(self.system, LtiSystem):
            return self.system
        return LtiSystem(self.system.sample(self.grid.points[:1])[0])

    def _ltv_engine(self, route: str) -> LtvEngine:
        solver = self.config.solver
        return LtvEngine(self._ltv_system(), route, self.rtol, solver.max_terms, self.oracle_cfg, self.seed, solver.basis)

    def _builders(self) -> Dict[str, TableBuilder]:
        solver = self.config.solver
        builders = {
            ROUTE_PEANO_BAKER: lambda s, b, g: peano_baker(s, b, g, self.rtol, solver.max_terms),
            ROUTE_BASIS: lambda s, b, g: stm_by_basis_solves(s, b, g, solver.basis, self.oracle_cfg),
            ROUTE_COMMUTING: lambda s, b, g: stm_commuting(s, b, g, self.rtol, self.seed),
        }
        if isinstance(self.system, LtiSystem) or self._ltv_system().is_constant_on(self.grid):
            lti = self._lti_system()
            builders[MATRIX_EXPONENTIAL] = lambda s, b, g: lti_transition_table(lti, g, b, self.rtol)
        builders["oracle"] = builders[ROUTE_BASIS]
        return builders

    def resolve_method(self) -> Tuple[str, str]:
        """Route for this run and the reason it was chosen."""
        method = self.config.solver.method
        if method != "auto":
            return method, "requested in config"
        if self.nonlinear:
            return "picard", "nonlinear field; oracle cross-check follows"
        ltv = self._ltv_system()
        if isinstance(self.system, LtiSystem) or ltv.is_constant_on(self.grid):
            return MATRIX_EXPONENTIAL, "constant matrix"
        worst, tol = commutator_check(ltv, self.grid, seed=self.seed)
        if worst <= tol:
            return ROUTE_COMMUTING, f"sampled commutator {worst:.3e} <= {tol:.3e}"
        return ROUTE_PEANO_BAKER, f"sampled commutator {worst:.3e} exceeds {tol:.3e}"

    def _run_section(self, command: str) -> None:
        config = self.config
        horizon = config.horizon
        for label, value in (
            ("command", command),
            ("config", config.name),
            ("system", f"{config.system.kind.value}, n={config.n}"),
            ("horizon", f"[{horizon.t0}, {horizon.T}] with {horizon.steps} steps, {horizon.rule.value} rule"),
            ("rtol", f"{self.rtol:g}"),
            ("seed", self.seed),
        ):
            self.report.field(RUN, label, value)

    def _finish(self, code: int, message: str) -> int:
        self.report.field(STATUS, "result", message)
        self.report.field(STATUS, "exit code", code)
        self.report.write(os.path.join(self.out_dir, self.config.outputs.report))
        log = logger.info if code == EXIT_OK else logger.error
        log(f"{message} (exit {code})")
        return code

    def _solver_failure(self, e: Exception) -> int:
        if isinstance(e, CommutativityError):
            self.report.field(SERIES, "commutator norm", e.commutator_norm)
            self.report.field(SERIES, "tolerance", e.tolerance)
            return self._finish(EXIT_SOLVER, f"Commuting route refused: {e}")
        if isinstance(e, ConvergenceError):
            diagnostics = e.diagnostics if isinstance(e.diagnostics, dict) else {}
            norms = diagnostics.get("term_norms", [])
            self.report.field(SERIES, "terms used", e.terms_used)
            self.report.table(SERIES, ("k", "term sup-norm"), [(k, float(v)) for k, v in enumerate(norms)])
            return self._finish(EXIT_SOLVER, f"Did not converge: {e}")
        if isinstance(e, BlowupError):
            self.report.field(STATUS, "last finite time", e.last_finite_time)
            return self._finish(EXIT_BLOWUP, f"Finite escape: {e}")
        if isinstance(e, FieldEvaluationError):
            self.report.field(STATUS, "failing point", f"t={e.t}, x={e.x}")
            return self._finish(EXIT_SOLVER, f"Field evaluation failed: {e}")
        return self._finish(EXIT_SOLVER, f"Solver failed: {e}")

    def _series_section(self, method: str, table: Optional[TransitionTable]) -> None:
        if table is None:
            self.report.field(SERIES, "route", method)
            return
        self.report.field(SERIES, "route", table.route)
        self.report.field(SERIES, "terms used", table.terms_used)
        if table.route == ROUTE_PEANO_BAKER:
            self.report.table(SERIES, ("k", "term sup-norm"), [(k, float(v)) for k, v in enumerate(table.term_norms)])
        self.report.field(CERTIFICATES, "series tail bound", float(table.tail_bound))

    def _oracle_deviation(self, trajectory: Trajectory) -> Optional[float]:
        if self.impulses:
            self.report.field(ORACLE, "skipped", "impulsive inputs are applied algebraically only")
            return None
        try:
            reference = self.engines["oracle"]().solve(self.x0, self.grid, self.signal)
        except BlowupError as e:
            self.report.field(ORACLE, "oracle blowup after t", e.last_finite_time)
            return None
        deviation = _sup(trajectory.states - reference.states)
        self.report.field(ORACLE, "sup |x - x_oracle|", deviation)
        self.report.field(ORACLE, "oracle substeps", self.oracle_cfg.substeps)
        return deviation

    def _escape(self, picard: PicardReport) -> int:
        """Blowup reporting; the oracle pins down the last finite time."""
        last_finite = picard.last_finite_time
        source = "picard"
        try:
            rk4_solve(self.system, self.x0, self.grid, self.oracle_cfg)
        except BlowupError as e:
            last_finite, source = e.last_finite_time, "oracle"
        self.report.field(STATUS, "last finite time", f"{last_finite} ({source})")
        return self._finish(EXIT_BLOWUP, f"Finite escape: state exceeded {self.config.solver.blowup_threshold:g}")

    def _picard_section(self, report: PicardReport) -> None:
        self.report.field(PICARD, "status", report.status.value)
        self.report.field(PICARD, "iterates used", report.iterates_used)
        if report.bound_sequence:
            rows = [(k, d, b) for k, (d, b) in enumerate(zip(report.successive_distances, report.bound_sequence))]
            self.report.table(PICARD, ("k", "||x_k+1 - x_k||", "envelope"), rows)
        else:
            self.report.table(PICARD, ("k", "||x_k+1 - x_k||"), list(enumerate(report.successive_distances)))

    def _nonlinear_certificates(self, report: PicardReport) -> None:
        system = self.system
        if system.lipschitz is not None:
            cert = convergence_certificates(system.lipschitz, self.grid.span)
            self.report.field(CERTIFICATES, "lipschitz (supplied)", cert.lipschitz)
            self.report.field(CERTIFICATES, "contraction factor lT", cert.contraction_factor)
            self.report.field(CERTIFICATES, "contraction holds", cert.contraction_holds)
            self.report.field(CERTIFICATES, "global envelope e^(lT)", cert.global_envelope)
            self.report.field(CERTIFICATES, "local horizon 1/l", cert.local_horizon)
            self.report.field(CERTIFICATES, "envelope peak index", cert.peak_index)
            if report.successive_distances:
                error = cert.a_priori_error(report.iterates_used, report.successive_distances[0])
                self.report.field(CERTIFICATES, "a-priori error bound", error)
        else:
            radius = max(1.0, _sup(self.x0))
            box = np.column_stack([self.x0 - radius, self.x0 + radius])
            estimate = estimate_lipschitz(system, box, self.config.solver.lipschitz_samples, self.seed, self.grid.t0)
            self.report.field(CERTIFICATES, "lipschitz estimate (sampled lower bound, not a certificate)", estimate)
        if system.n == 1:
            probe = nonuniqueness_probe(system, self.x0, self.grid, rtol=self.rtol,
                                        max_iters=self.config.solver.max_iters, seed=self.seed, cfg=self.oracle_cfg)
            self.report.field(CERTIFICATES, "non-uniqueness flag", probe.flagged)
            self.report.table(CERTIFICATES, ("half-width", "lipschitz estimate"), probe.lipschitz_estimates)
            self.report.field(CERTIFICATES, "divergence ratio (picard)", probe.picard_divergence)
            if probe.oracle_divergence is not None:
                self.report.field(CERTIFICATES, "divergence ratio (oracle)", probe.oracle_divergence)
            self.report.add(CERTIFICATES, probe.note)

    def _linear_table(self, engine: BaseEngine, method: str) -> Optional[TransitionTable]:
        if isinstance(engine, LtvEngine):
            return engine.last_table
        if method == MATRIX_EXPONENTIAL:
            return engine.transition_table(self.grid.t0, self.grid)
        if self.config.outputs.stm:
            return self._builders()["oracle"](self._ltv_system(), self.grid.t0, self.grid)
        return None

    def _semigroup_times(self) -> Tuple[float, float, float]:
        points = self.grid.points
        return float(points[0]), float(points[len(points) // 2]), float(points[-1])

    def run(self) -> int:
        self._run_section("run")
        try:
            method, reason = self.resolve_method()
            self.report.field(ROUTE, "method", method)
            self.report.field(ROUTE, "reason", reason)
            engine = self.engines[method]()
            trajectory = engine.solve(self.x0, self.grid, self.signal, self.impulses)
            table = None
            if self.nonlinear:
                code = self._finish_nonlinear_run(engine, trajectory)
                if code is not None:
                    return code
            else:
                table = self._linear_table(engine, method)
                self._series_section(method, table)
                residual = semigroup_check(self._builders()[method], self._ltv_system(), self._semigroup_times(), self.grid)
                self.report.field(SEMIGROUP, "||Phi(t3,t1) - Phi(t3,t2) Phi(t2,t1)||", residual.composition)
                self.report.field(SEMIGROUP, "||Phi(t2,t1) Phi(t1,t2) - I||", residual.inverse)
                self._oracle_deviation(trajectory)
            outputs = self.config.outputs
            for path in write_outputs(self.out_dir, outputs.trajectory, trajectory, outputs.stm, table):
                self.report.field(STATUS, "wrote", path)
        except SolverError as e:
            return self._solver_failure(e)
        except (ValidationError, EvaluationError) as e:
            return self._finish(EXIT_CONFIG, f"Invalid input: {e}")
        return self._finish(EXIT_OK, f"Solved with {method}")

    def _finish_nonlinear_run(self, engine: BaseEngine, trajectory: Trajectory) -> Optional[int]:
        if isinstance(engine, PicardEngine):
            report = engine.last_report
            self._picard_section(report)
            if report.status == PicardStatus.BLOWUP:
                return self._escape(report)
            self._nonlinear_certificates(report)
            if report.status == PicardStatus.MAX_ITERATIONS:
                self._oracle_deviation(trajectory)
                return self._finish(EXIT_SOLVER, f"Picard iteration did not converge in {report.iterates_used} iterates")
        split = len(self.grid) // 2
        self.report.field(SEMIGROUP, "flow restart residual", flow_semigroup_residual(self.system, self.x0, self.grid, split, self.oracle_cfg))
        if isinstance(engine, PicardEngine):
            self._oracle_deviation(trajectory)
        return None

    def verify(self) -> int:
        self._run_section("verify")
        self.report.field(ROUTE, "method", "all applicable routes")
        try:
            failures = self._verify_nonlinear() if self.nonlinear else self._verify_linear()
        except SolverError as e:
            return self._solver_failure(e)
        except (ValidationError, EvaluationError) as e:
            return self._finish(EXIT_CONFIG, f"Invalid input: {e}")
        if isinstance(failures, int):
            return failures
        if failures:
            return self._finish(EXIT_SOLVER, f"Residuals above tolerance: {', '.join(failures)}")
        return self._finish(EXIT_OK, "All residuals within tolerance")

    def _verify_linear(self):
        ltv = self._ltv_system()
        base = self.grid.t0
        requested = self.config.solver.method
        tables: Dict[str, TransitionTable] = {}
        builders = self._builders()
        del builders["oracle"]
        for name, build in builders.items():
            try:
                tables[name] = build(ltv, base, self.grid)
            except CommutativityError as e:
                if requested == ROUTE_COMMUTING:
                    raise
                self.report.field(ROUTE, name, f"not applicable ({e})")
        builders = {name: builders[name] for name in tables}
        self.report.field(ROUTE, "routes", ", ".join(tables))

        failures: List[str] = []
        reference = tables[ROUTE_PEANO_BAKER]
        self._series_section(ROUTE_PEANO_BAKER, reference)
        rows = []
        for name, table in tables.items():
            if name == ROUTE_PEANO_BAKER:
                continue
            gap = _table_gap(table, reference)
            ok = gap <= ROUTE_TOLERANCE
            rows.append((name, gap, ROUTE_TOLERANCE, "ok" if ok else "FAIL"))
            if not ok:
                failures.append(f"{name} vs {ROUTE_PEANO_BAKER}")
        self.report.table(ROUTE, ("route", "max ||Phi - Phi_pb||", "tolerance", "check"), rows)

        h = self.grid.max_step
        alpha = float(np.max(np.linalg.norm(ltv.sample(self.grid), 2, axis=(1, 2))))
        rows = []
        for name, table in tables.items():
            residual = semigroup_check(builders[name], ltv, self._semigroup_times(), self.grid)
            ok = residual.worst <= SEMIGROUP_TOLERANCE
            scale = float(np.max(np.linalg.norm(table.matrices, 2, axis=(1, 2))))
            ode_tol = 10.0 * h ** 2 * (1.0 + alpha) ** 3 * scale
            ode = stm_derivative_residual(table, ltv)
            rows.append((name, residual.composition, residual.inverse, ode, ode_tol,
                         "ok" if ok and ode <= ode_tol else "FAIL"))
            if not ok:
                failures.append(f"{name} semigroup")
            if ode > ode_tol:
                failures.append(f"{name} STM ODE residual")
        self.report.table(SEMIGROUP, ("route", "composition", "inverse", "STM ODE", "ODE tolerance", "check"), rows)

        if not self.impulses:
            trajectory = self._ltv_engine(ROUTE_PEANO_BAKER).solve(self.x0, self.grid, self.signal)
            deviation = self._oracle_deviation(trajectory)
            if deviation is not None and deviation > ROUTE_TOLERANCE:
                failures.append("oracle deviation")
        return failures

    def _verify_nonlinear(self):
        solver = self.config.solver
        trajectory, report = picard_solve(self.system, self.x0, self.grid, self.rtol,
                                          solver.max_iters, solver.blowup_threshold)
        self._picard_section(report)
        if report.status == PicardStatus.BLOWUP:
            return self._escape(report)
        failures: List[str] = []
        if report.status != PicardStatus.CONVERGED:
            failures.append("picard convergence")

        residual = fixed_point_residual(self.system, self.x0, trajectory)
        tolerance = 2.0 * self.rtol * (1.0 + _sup(trajectory.states))
        self.report.field(PICARD, "fixed-point residual", residual)
        self.report.field(PICARD, "fixed-point tolerance", tolerance)
        if residual > tolerance:
            failures.append("fixed-point residual")

        if self.system.lipschitz is not None and report.bound_sequence:
            slack = 1.0 + 1e-6
            held = all(d <= b * slack + self.rtol for d, b in zip(report.successive_distances, report.bound_sequence))
            self.report.field(CERTIFICATES, "successive distances within envelope", held)
            cert = convergence_certificates(self.system.lipschitz, self.grid.span)
            total = sum(report.successive_distances)
            self.report.field(CERTIFICATES, "sum of distances", total)
            self.report.field(CERTIFICATES, "e^(lT) ||x_1 - x_0||", cert.global_envelope * report.successive_distances[0])

        split = len(self.grid) // 2
        flow = flow_semigroup_residual(self.system, self.x0, self.grid, split, self.oracle_cfg)
        self.report.field(SEMIGROUP, "flow restart residual", flow)
        if flow > SEMIGROUP_TOLERANCE:
            failures.append("flow semigroup")

        deviation = self._oracle_deviation(trajectory)
        if deviation is not None:
            self.report.field(ORACLE, "tolerance", NONLINEAR_ROUTE_TOLERANCE)
            if deviation > NONLINEAR_ROUTE_TOLERANCE:
                failures.append("oracle deviation")
        return failures


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="Path to a JSON run config")
    common.add_argument("--rtol", type=_positive_float, default=None, help="Relative tolerance for series and iterations")
    common.add_argument("--out-dir", default=None, help="Directory for CSV files and the report")
    common.add_argument("--seed", type=_seed, default=None, help="Seed for randomized checks")
    common.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--log-format", default=None, choices=list(LOG_FORMATS))

    parser = argparse.ArgumentParser(
        prog="statespace",
        description="Solve LTI, LTV and nonlinear state-space models by series and iteration",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("run", parents=[common], help="Solve and write CSV files and a report")
    commands.add_parser("verify", parents=[common], help="Cross-check every applicable route")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Config()
    except ValidationError as e:
        configure_logging()
        logger.error(f"Environment error: {e.message} (field={e.field})")
        return EXIT_CONFIG
    configure_logging(args.log_level or settings.log_level, args.log_format or settings.log_format)

    try:
        config = load_run_config(args.config)
        rtol = args.rtol or config.solver.rtol or settings.rtol
        seed = args.seed if args.seed is not None else settings.seed
        runner = StateSpaceRunner(config, rtol, args.out_dir or settings.out_dir, seed)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except ValidationError as e:
        logger.error(f"Config error: {e.message} | field={e.field}")
        return EXIT_CONFIG

    if args.command == "run":
        return runner.run()
    return runner.verify()


if __name__ == "__main__":
    sys.exit(main())
