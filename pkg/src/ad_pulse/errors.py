EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class AdPulseError(Exception):
    exit_code = EXIT_FAILURE


class ConfigError(AdPulseError):
    exit_code = EXIT_CONFIG

    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class ValidationError(AdPulseError, ValueError):
    pass


class InvariantViolation(AdPulseError):
    exit_code = EXIT_NUMERICAL


class StateInvariantError(InvariantViolation):
    def __init__(self, step, rep, detail):
        self.step = step
        self.rep = rep
        self.detail = detail
        super().__init__(f"state invariant violated at step {step} (repetition {rep}): {detail}")


class EigenSolverError(InvariantViolation):
    def __init__(self, tau, detail):
        self.tau = tau
        super().__init__(f"eigendecomposition failed at tau={tau:.6e} s: {detail}")


class ScheduleError(AdPulseError):
    pass
