"""
Qubit-register emulation of the spin-j cat flip

N qubits stand in for a spin j = N/2; |1...1> plays |+j> and |0...0> plays |-j>.
Qubit 1 is the leftmost (most significant) bit of a basis label.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

logger = logging.getLogger("Macroreal")

MAX_QUBITS = 24
NORM_TOLERANCE = 1e-12

ROTATE = "rotate"
CNOT = "cnot"


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple
    interval: int
    angle: float = None
    control_state: int = 1

    def to_record(self):
        record = asdict(self)
        record["qubits"] = list(self.qubits)
        return record

    @classmethod
    def from_record(cls, record):
        return cls(record["kind"], tuple(record["qubits"]), record["interval"],
                   record.get("angle"), record.get("control_state", 1))


@dataclass(eq=False)
class GateLog:
    gates: list = field(default_factory=list)
    global_steps: int = 0

    def record(self, gate):
        self.gates.append(gate)

    def counts_per_interval(self):
        counts = {}
        for gate in self.gates:
            counts[gate.interval] = counts.get(gate.interval, 0) + 1
        return [counts[k] for k in sorted(counts)]

    def to_json_lines(self):
        return "".join(json.dumps(gate.to_record(), sort_keys=True) + "\n" for gate in self.gates)

    @classmethod
    def from_json_lines(cls, text):
        return cls([Gate.from_record(json.loads(line)) for line in text.splitlines() if line.strip()])

    def replay(self, register):
        """Apply the logged gates, in order, to `register` (without logging them again)."""
        for gate in self.gates:
            if gate.kind == ROTATE:
                _rotate(register, gate.qubits[0], gate.angle)
            elif gate.kind == CNOT:
                _cnot(register, gate.qubits[0], gate.qubits[1], gate.control_state)
            else:
                raise ValueError(f"Unknown gate kind {gate.kind!r}")
        return register


class QubitRegister:
    def __init__(self, n, amplitudes=None):
        if int(n) != n or not 1 <= n <= MAX_QUBITS:
            raise ValueError(f"Register size must be an integer in [1, {MAX_QUBITS}], got {n}")
        self.n = int(n)
        if amplitudes is None:
            amplitudes = np.zeros(2 ** self.n, dtype=complex)
            amplitudes[0] = 1.0
        amplitudes = np.array(amplitudes, dtype=complex)
        if amplitudes.shape != (2 ** self.n,):
            raise ValueError(f"Expected {2 ** self.n} amplitudes, got shape {amplitudes.shape}")
        norm = np.vdot(amplitudes, amplitudes).real
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"Register state is not normalised (squared norm {norm!r})")
        self.amplitudes = amplitudes
        self.log = GateLog()
        self.interval = 1

    @classmethod
    def basis(cls, bits):
        """Register in the computational basis state labelled e.g. '101' (qubit 1 first)."""
        if not bits or set(bits) - {"0", "1"}:
            raise ValueError(f"Invalid basis label {bits!r}")
        amplitudes = np.zeros(2 ** len(bits), dtype=complex)
        amplitudes[int(bits, 2)] = 1.0
        return cls(len(bits), amplitudes)

    def copy(self):
        return QubitRegister(self.n, self.amplitudes.copy())

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def amplitude(self, bits):
        return complex(self.amplitudes[int(bits, 2)])

    def _check_qubit(self, qubit):
        if int(qubit) != qubit or not 1 <= qubit <= self.n:
            raise ValueError(f"Qubit index {qubit} outside 1..{self.n}")

    def _tensor(self):
        return self.amplitudes.reshape((2,) * self.n)


def _rotate(register, qubit, angle):
    psi = register._tensor()
    axis = qubit - 1
    zero = np.take(psi, 0, axis=axis)
    one = np.take(psi, 1, axis=axis)
    c, s = math.cos(angle), math.sin(angle)
    # |1> -> c|1> + s|0>, |0> -> c|0> - s|1>
    register.amplitudes = np.stack([c * zero + s * one, -s * zero + c * one], axis=axis).reshape(-1)


def _cnot(register, control, target, control_state):
    psi = register._tensor()
    out = psi.copy()
    flip_from = [slice(None)] * register.n
    flip_from[control - 1] = control_state
    flip_to = list(flip_from)
    flip_from[target - 1] = 0
    flip_to[target - 1] = 1
    out[tuple(flip_from)] = psi[tuple(flip_to)]
    out[tuple(flip_to)] = psi[tuple(flip_from)]
    register.amplitudes = out.reshape(-1)


def apply_rotation(register, qubit, angle):
    register._check_qubit(qubit)
    if not math.isfinite(angle):
        raise ValueError("Rotation angle must be finite")
    _rotate(register, qubit, angle)
    register.log.record(Gate(ROTATE, (qubit,), register.interval, float(angle)))
    return register


def apply_cnot(register, control, target, control_state=1):
    """Flip `target` when `control` is in `control_state` (1 for a standard CNOT)."""
    register._check_qubit(control)
    register._check_qubit(target)
    if control == target:
        raise ValueError("Control and target must be different qubits")
    if control_state not in (0, 1):
        raise ValueError("Control state must be 0 or 1")
    _cnot(register, control, target, control_state)
    register.log.record(Gate(CNOT, (control, target), register.interval, None, control_state))
    return register


def _cascade(register, reverse=False):
    pairs = [(q, q + 1) for q in range(1, register.n)]
    for control, target in reversed(pairs) if reverse else pairs:
        apply_cnot(register, control, target, control_state=0)


def cat_target(n, angle):
    """cos(angle)|1...1> + sin(angle)|0...0>."""
    amplitudes = np.zeros(2 ** n, dtype=complex)
    amplitudes[-1] = math.cos(angle)
    amplitudes[0] = math.sin(angle)
    return amplitudes


def simulate_cat_protocol(n, omega_dt, intervals):
    """
    Drive |1...1> through `intervals` steps of the cat flip with two-qubit gates.

    The first interval rotates qubit 1 and fans the result out with a cascade of
    anti-controlled NOTs; later intervals undo the cascade, rotate and redo it.
    Returns (register, gate log, fidelities) with one target fidelity per interval.
    """
    if int(intervals) != intervals or intervals < 1:
        raise ValueError(f"Number of intervals must be a positive integer, got {intervals}")
    if n < 2:
        raise ValueError("The cat protocol needs at least two qubits")
    register = QubitRegister.basis("1" * n)
    fidelities = []
    for interval in range(1, int(intervals) + 1):
        register.interval = interval
        if interval > 1:
            _cascade(register, reverse=True)
        apply_rotation(register, 1, omega_dt)
        _cascade(register)
        target = cat_target(n, interval * omega_dt)
        fidelities.append(float(abs(np.vdot(target, register.amplitudes)) ** 2))
    logger.debug("Cat protocol n=%d: gate counts %s", n, register.log.counts_per_interval())
    return register, register.log, fidelities


def simulate_global_rotation(n, omega_dt):
    """Rotate every qubit of |1...1> by omega_dt: N single-qubit gates, one global step."""
    register = QubitRegister.basis("1" * n)
    for qubit in range(1, n + 1):
        apply_rotation(register, qubit, omega_dt)
    register.log.global_steps = 1
    return register


def cat_subspace_amplitudes(register):
    """Amplitudes on |1...1> and |0...0>, i.e. on |+j> and |-j>."""
    return complex(register.amplitudes[-1]), complex(register.amplitudes[0])


@dataclass(frozen=True, eq=False)
class ScalingTable:
    rows: tuple
    slope: float = None
    fidelities: dict = field(default_factory=dict)
    logs: dict = field(default_factory=dict)

    def steady_counts(self):
        last = {}
        for n, _, gates in self.rows:
            last[n] = gates
        return last

    def to_records(self):
        return [{"n": n, "interval": k, "gates": gates} for n, k, gates in self.rows]


def gate_count_scaling(n_list, intervals, omega_dt=math.pi / 8):
    """
    Gate counts per interval for each register size, and the steady-state slope in N.

    The slope is fitted on the last interval of every size; it is None when fewer than
    two distinct sizes are given.
    """
    n_list = sorted(set(int(n) for n in n_list))
    rows, steady, fidelities, logs = [], [], {}, {}
    for n in n_list:
        _, logs[n], fidelities[n] = simulate_cat_protocol(n, omega_dt, intervals)
        counts = logs[n].counts_per_interval()
        rows.extend((n, k, gates) for k, gates in enumerate(counts, start=1))
        steady.append(counts[-1])
    slope = None
    if len(n_list) >= 2:
        slope = float(np.polyfit(n_list, steady, 1)[0])
        logger.info("Steady-state gate count grows with slope %.3f per qubit", slope)
    return ScalingTable(tuple(rows), slope, fidelities, logs)
