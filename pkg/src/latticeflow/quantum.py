"""Differentiable statevector simulation of a small RY/CNOT circuit.

Basis states are little-endian: qubit ``q`` is bit ``q`` of the amplitude
index, so qubit 0 is the least significant bit. Amplitudes are held as a pair
of real tape nodes and may carry a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape


@dataclass
class Statevector:
    re: Node
    im: Node

    @property
    def n_qubits(self) -> int:
        return int(self.re.value.shape[-1]).bit_length() - 1

    @property
    def amplitudes(self) -> np.ndarray:
        return self.re.value + 1j * self.im.value

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.re.value**2 + self.im.value**2, axis=-1))

    def probabilities(self) -> Node:
        return ad.abs2(self.re, self.im)


def _lift(v, tape=None) -> Node:
    if isinstance(v, Node):
        return v
    return (tape or Tape()).constant(v)


def amplitude_embed(v) -> Statevector:
    """Encode a real vector (or rows of a matrix) as normalised real amplitudes."""
    v = _lift(v)
    n = v.value.shape[-1]
    if n & (n - 1) or n == 0:
        raise ValueError(f"amplitude embedding needs a power-of-two length, got {n}")
    re = ad.normalize_l2(v)
    return Statevector(re, v.tape.constant(np.zeros_like(re.value)))


def pad_to(v: Node, size: int) -> Node:
    n = v.value.shape[-1]
    if n > size:
        raise ValueError(f"cannot pad length {n} down to {size}")
    if n == size:
        return v
    pad = np.zeros(v.value.shape[:-1] + (size - n,))
    return ad.concat([v, v.tape.constant(pad)])


@lru_cache(maxsize=None)
def _ry_indices(n_qubits: int, qubit: int):
    idx = np.arange(2**n_qubits)
    idx0 = idx[(idx >> qubit) & 1 == 0]
    idx1 = idx0 | (1 << qubit)
    order = np.concatenate([idx0, idx1])
    return idx0, idx1, np.argsort(order)


@lru_cache(maxsize=None)
def _cnot_perm(n_qubits: int, control: int, target: int):
    idx = np.arange(2**n_qubits)
    return np.where((idx >> control) & 1, idx ^ (1 << target), idx)


def _check_qubit(q, n):
    if not 0 <= q < n:
        raise IndexError(f"qubit index {q} out of range for {n} qubits")


def apply_ry(psi: Statevector, qubit: int, angle) -> Statevector:
    """RY(angle) = [[cos a/2, -sin a/2], [sin a/2, cos a/2]] on one qubit.

    ``angle`` is a scalar or, for batched states, one angle per row.
    """
    n = psi.n_qubits
    _check_qubit(qubit, n)
    tape = psi.re.tape
    angle = _lift(angle, tape) if not isinstance(angle, Node) else angle
    half = ad.scale(angle, 0.5)
    c, s = ad.cos(half), ad.sin(half)
    if psi.re.value.ndim == 2:
        if c.value.ndim == 0:
            c = ad.mul(c, tape.constant(np.ones((psi.re.value.shape[0], 1))))
            s = ad.mul(s, tape.constant(np.ones((psi.re.value.shape[0], 1))))
        else:
            c, s = ad.column(c), ad.column(s)
    idx0, idx1, inv = _ry_indices(n, qubit)

    def rotate(x):
        a0, a1 = ad.take(x, idx0), ad.take(x, idx1)
        n0 = ad.sub(ad.mul(c, a0), ad.mul(s, a1))
        n1 = ad.add(ad.mul(s, a0), ad.mul(c, a1))
        return ad.take(ad.concat([n0, n1]), inv)

    return Statevector(rotate(psi.re), rotate(psi.im))


def apply_cnot(psi: Statevector, control: int, target: int) -> Statevector:
    n = psi.n_qubits
    _check_qubit(control, n)
    _check_qubit(target, n)
    if control == target:
        raise ValueError("CNOT control and target must differ")
    perm = _cnot_perm(n, control, target)
    return Statevector(ad.take(psi.re, perm), ad.take(psi.im, perm))


def apply_unitary(psi: Statevector, U: np.ndarray) -> Statevector:
    """Apply a dense complex matrix to the state."""
    tape = psi.re.tape
    U = np.asarray(U, dtype=np.complex128)
    re, im = ad.complex_matvec(
        (tape.constant(U.real), tape.constant(U.imag)), (psi.re, psi.im)
    )
    return Statevector(re, im)


def ry_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array([[c, -s], [s, c]])


class QuantumCircuit:
    """``depth`` layers of RY on every qubit followed by a CNOT ring 0->1->...->n-1->0."""

    def __init__(self, n_qubits=5, depth=2):
        if n_qubits < 1 or depth < 1:
            raise ValueError("need at least one qubit and one layer")
        self.n_qubits = int(n_qubits)
        self.depth = int(depth)

    @property
    def n_angles(self) -> int:
        return self.n_qubits * self.depth

    @property
    def ring(self):
        n = self.n_qubits
        if n == 1:
            return []
        if n == 2:
            return [(0, 1)]
        return [(q, (q + 1) % n) for q in range(n)]

    def __call__(self, psi: Statevector, angles: Node) -> Statevector:
        batched = angles.value.ndim == 2
        for layer in range(self.depth):
            for q in range(self.n_qubits):
                k = layer * self.n_qubits + q
                a = ad.take(angles, k) if batched else ad.take(angles, slice(k, k + 1))
                if not batched:
                    a = ad.sum_(a)
                psi = apply_ry(psi, q, a)
            for control, target in self.ring:
                psi = apply_cnot(psi, control, target)
        return psi


def run_circuit(layer, z_q, z_c) -> Node:
    """Born-rule probabilities of the circuit applied to ``|z_q>`` with angles from ``z_c``.

    ``z_q`` is zero-padded up to ``2**n_qubits`` entries before embedding.
    """
    tape = z_q.tape if isinstance(z_q, Node) else (z_c.tape if isinstance(z_c, Node) else Tape())
    z_q, z_c = _lift(z_q, tape), _lift(z_c, tape)
    circuit = layer.circuit
    psi = amplitude_embed(pad_to(z_q, 2**circuit.n_qubits))
    angles = layer.encoder(z_c)
    return circuit(psi, angles).probabilities()


def quantum_loss(p_q: Node) -> Node:
    """Negative probability of the all-zeros outcome, one value per row."""
    return ad.neg(ad.take(p_q, 0))
