#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
反向模式自动微分核心
面向稠密矩阵的即时求值计算带（Tape）、参数仓库（ParamStore）与梯度检验

所有数值运算均使用 float64；矩阵求逆与对数行列式共享同一次 LU 分解。
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg as sla
from scipy import special

logger = logging.getLogger(__name__)

# |det| 相对于 Hadamard 上界（列范数之积）低于该比例即视为奇异
SINGULAR_RTOL = 1e-12

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


class NumericalError(ArithmeticError):
    """数值计算错误基类"""


class SingularMatrixError(NumericalError):
    """矩阵奇异（求逆或对数行列式无法可靠计算）"""


class NonFiniteError(NumericalError):
    """前向或反向计算中出现 NaN / Inf"""


class ShapeError(ValueError):
    """输入形状与原语不匹配"""


@dataclass
class Node:
    """计算带上的一个节点"""
    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    attrs: Dict[str, Any] = field(default_factory=dict)
    cache: Any = None


@dataclass(frozen=True)
class Primitive:
    """原语定义：前向函数返回 (值, 缓存)，反向函数返回各输入的梯度"""
    name: str
    arity: int  # -1 表示可变参数
    forward: Callable[[List[np.ndarray], Dict[str, Any]], Tuple[np.ndarray, Any]]
    backward: Callable[[np.ndarray, Node, List[np.ndarray]], List[Optional[np.ndarray]]]


PRIMITIVES: Dict[str, Primitive] = {}


def _register(name: str, arity: int, forward, backward) -> None:
    PRIMITIVES[name] = Primitive(name, arity, forward, backward)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度求和回原始形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _factorize(matrix: np.ndarray) -> Tuple[Tuple[np.ndarray, np.ndarray], float, float]:
    """
    LU 分解并检查奇异性

    Returns:
        ((lu, piv), 符号, log|det|)
    """
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"square matrix required, got shape {matrix.shape}")
    col_norms = np.linalg.norm(matrix, axis=0)
    if np.any(col_norms == 0.0):
        raise SingularMatrixError("singular matrix: zero column")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(matrix, check_finite=False)
    pivots = np.diag(lu)
    if np.any(pivots == 0.0):
        raise SingularMatrixError("singular matrix: zero pivot")
    log_abs_det = float(np.sum(np.log(np.abs(pivots))))
    if log_abs_det - float(np.sum(np.log(col_norms))) < math.log(SINGULAR_RTOL):
        raise SingularMatrixError(
            f"singular matrix: |det| below {SINGULAR_RTOL:g} of matrix scale"
        )
    swaps = int(np.count_nonzero(piv != np.arange(piv.shape[0])))
    sign = float(np.prod(np.sign(pivots))) * (-1.0 if swaps % 2 else 1.0)
    return (lu, piv), sign, log_abs_det


# ---------------------------------------------------------------------------
# 原语实现
# ---------------------------------------------------------------------------

def _fwd_leaf(values, attrs):
    return attrs["value"], None


def _fwd_matmul(values, attrs):
    a, b = values
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return np.matmul(a, b), None


def _bwd_matmul(g, node, values):
    a, b = values
    if a.ndim == 2 and b.ndim == 2:
        return [g @ b.T, a.T @ g]
    if a.ndim == 2:
        return [np.outer(g, b), a.T @ g]
    if b.ndim == 2:
        return [b @ g, np.outer(a, g)]
    return [g * b, g * a]


def _fwd_transpose(values, attrs):
    (a,) = values
    return a.T.copy(), None


def _fwd_reshape(values, attrs):
    (a,) = values
    try:
        return a.reshape(attrs["shape"]).copy(), None
    except ValueError as exc:
        raise ShapeError(f"reshape {a.shape} -> {attrs['shape']}: {exc}") from exc


def _broadcast_check(a: np.ndarray, b: np.ndarray, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{kind} shape mismatch: {a.shape} vs {b.shape}") from exc


def _fwd_add(values, attrs):
    a, b = values
    _broadcast_check(a, b, "add")
    return a + b, None


def _fwd_sub(values, attrs):
    a, b = values
    _broadcast_check(a, b, "sub")
    return a - b, None


def _fwd_mul(values, attrs):
    a, b = values
    _broadcast_check(a, b, "mul")
    return a * b, None


def _fwd_scale(values, attrs):
    return values[0] * attrs["factor"], None


def _fwd_add_const(values, attrs):
    return values[0] + attrs["value"], None


def _fwd_tanh(values, attrs):
    return np.tanh(values[0]), None


def _fwd_exp(values, attrs):
    return np.exp(values[0]), None


def _fwd_log(values, attrs):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(values[0]), None


def _fwd_sigmoid(values, attrs):
    return special.expit(values[0]), None


def _fwd_relu(values, attrs):
    return np.maximum(values[0], 0.0), None


def _fwd_softmax(values, attrs):
    return special.softmax(values[0], axis=attrs["axis"]), None


def _bwd_softmax(g, node, values):
    y = node.value
    axis = node.attrs["axis"]
    return [y * (g - np.sum(g * y, axis=axis, keepdims=True))]


def _fwd_sum(values, attrs):
    axis = attrs["axis"]
    (a,) = values
    if axis is not None and axis >= a.ndim:
        raise ShapeError(f"sum axis {axis} out of range for shape {a.shape}")
    return np.asarray(np.sum(a, axis=axis)), None


def _bwd_sum(g, node, values):
    (a,) = values
    axis = node.attrs["axis"]
    if axis is None:
        return [np.full(a.shape, float(g))]
    return [np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()]


def _fwd_concat(values, attrs):
    try:
        return np.concatenate(values, axis=attrs["axis"]), None
    except ValueError as exc:
        raise ShapeError(f"concat shape mismatch: {[v.shape for v in values]}") from exc


def _bwd_concat(g, node, values):
    axis = node.attrs["axis"]
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    return list(np.split(g, bounds, axis=axis))


def _fwd_slice(values, attrs):
    try:
        return np.array(values[0][attrs["index"]], dtype=np.float64), None
    except IndexError as exc:
        raise ShapeError(f"slice out of range for shape {values[0].shape}") from exc


def _bwd_slice(g, node, values):
    grad = np.zeros_like(values[0])
    np.add.at(grad, node.attrs["index"], g)
    return [grad]


def _fwd_inverse(values, attrs):
    factor, _, _ = _factorize(values[0])
    eye = np.eye(values[0].shape[0])
    return sla.lu_solve(factor, eye, check_finite=False), None


def _bwd_inverse(g, node, values):
    b = node.value
    return [-(b.T @ g @ b.T)]


def _fwd_logdet(values, attrs):
    factor, sign, log_abs_det = _factorize(values[0])
    return np.asarray(log_abs_det), (factor, sign)


def _bwd_logdet(g, node, values):
    factor, _ = node.cache
    eye = np.eye(values[0].shape[0])
    # d log|det A| / dA = A^{-T}
    inv_t = sla.lu_solve(factor, eye, trans=1, check_finite=False)
    return [float(g) * inv_t]


def _fwd_masked_fill(values, attrs):
    mask = attrs["mask"]
    if mask.shape != values[0].shape:
        raise ShapeError(f"mask shape {mask.shape} != input shape {values[0].shape}")
    return np.where(mask, attrs["fill"], values[0]), None


def _bwd_masked_fill(g, node, values):
    return [np.where(node.attrs["mask"], 0.0, g)]


def _fwd_gather(values, attrs):
    table = values[0]
    indices = attrs["indices"]
    if table.ndim != 2 or (indices.size and (indices.min() < 0 or indices.max() >= table.shape[0])):
        raise ShapeError(f"gather indices out of range for table {table.shape}")
    return table[indices].copy(), None


def _bwd_gather(g, node, values):
    grad = np.zeros_like(values[0])
    np.add.at(grad, node.attrs["indices"], g)
    return [grad]


def _fwd_clamp(values, attrs):
    return np.clip(values[0], attrs["lo"], attrs["hi"]), None


def _bwd_clamp(g, node, values):
    x = values[0]
    inside = (x >= node.attrs["lo"]) & (x <= node.attrs["hi"])
    return [g * inside]


_register("const", 0, _fwd_leaf, lambda g, n, v: [])
_register("param", 0, _fwd_leaf, lambda g, n, v: [])
_register("matmul", 2, _fwd_matmul, _bwd_matmul)
_register("transpose", 1, _fwd_transpose, lambda g, n, v: [g.T])
_register("reshape", 1, _fwd_reshape, lambda g, n, v: [g.reshape(v[0].shape)])
_register("add", 2, _fwd_add,
          lambda g, n, v: [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)])
_register("sub", 2, _fwd_sub,
          lambda g, n, v: [_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)])
_register("mul", 2, _fwd_mul,
          lambda g, n, v: [_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)])
_register("scale", 1, _fwd_scale, lambda g, n, v: [g * n.attrs["factor"]])
_register("add_const", 1, _fwd_add_const, lambda g, n, v: [g])
_register("tanh", 1, _fwd_tanh, lambda g, n, v: [g * (1.0 - n.value ** 2)])
_register("exp", 1, _fwd_exp, lambda g, n, v: [g * n.value])
_register("log", 1, _fwd_log, lambda g, n, v: [g / v[0]])
_register("sigmoid", 1, _fwd_sigmoid, lambda g, n, v: [g * n.value * (1.0 - n.value)])
_register("relu", 1, _fwd_relu, lambda g, n, v: [g * (v[0] > 0.0)])
_register("softmax", 1, _fwd_softmax, _bwd_softmax)
_register("sum", 1, _fwd_sum, _bwd_sum)
_register("concat", -1, _fwd_concat, _bwd_concat)
_register("slice", 1, _fwd_slice, _bwd_slice)
_register("inverse", 1, _fwd_inverse, _bwd_inverse)
_register("logdet", 1, _fwd_logdet, _bwd_logdet)
_register("masked_fill", 1, _fwd_masked_fill, _bwd_masked_fill)
_register("gather", 1, _fwd_gather, _bwd_gather)
_register("clamp", 1, _fwd_clamp, _bwd_clamp)


# ---------------------------------------------------------------------------
# 参数仓库
# ---------------------------------------------------------------------------

class ParamStore:
    """
    参数仓库
    名称 -> (值, 梯度, 初始化方式)，按插入顺序保存，初始化按 (seed, 插入序号) 播种
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._values: Dict[str, np.ndarray] = {}
        self._grads: Dict[str, np.ndarray] = {}
        self._inits: Dict[str, str] = {}

    def add(self, name: str, shape: Tuple[int, ...], init: str = "glorot",
            value: Optional[np.ndarray] = None, scale: float = 0.1) -> np.ndarray:
        """
        注册参数

        Args:
            name: 唯一参数名
            shape: 形状
            init: glorot（矩阵）、zeros（偏置）、uniform（±scale）或 given（使用 value）
            value: init='given' 时的初始值
            scale: init='uniform' 时的区间半宽
        """
        if name in self._values:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"parameter {name} needs positive extents, got {shape}")
        rng = np.random.default_rng([self.seed, len(self._values)])
        if init == "glorot":
            fan_out = shape[0]
            fan_in = shape[1] if len(shape) > 1 else shape[0]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            arr = np.zeros(shape)
        elif init == "uniform":
            arr = rng.uniform(-scale, scale, size=shape)
        elif init == "given":
            arr = np.array(value, dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"parameter {name}: value shape {arr.shape} != {shape}")
        else:
            raise ValueError(f"unknown initializer: {init}")
        self._values[name] = arr.astype(np.float64)
        self._grads[name] = np.zeros(shape)
        self._inits[name] = init
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> List[str]:
        return list(self._values)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._values.items())

    def value(self, name: str) -> np.ndarray:
        try:
            return self._values[name]
        except KeyError:
            raise KeyError(f"missing parameter: {name}") from None

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def init_spec(self, name: str) -> str:
        return self._inits[name]

    def set_value(self, name: str, value: np.ndarray) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise ShapeError(f"parameter {name}: shape {arr.shape} != {self._values[name].shape}")
        self._values[name] = arr.copy()

    def zero_grad(self) -> None:
        for name in self._grads:
            self._grads[name] = np.zeros_like(self._values[name])

    def accumulate(self, grads: Dict[str, np.ndarray]) -> None:
        """把一组按名称的梯度累加到梯度缓冲"""
        for name, grad in grads.items():
            if grad.shape != self._grads[name].shape:
                raise ShapeError(f"gradient for {name} has shape {grad.shape}")
            self._grads[name] = self._grads[name] + grad

    def snapshot(self) -> "ParamStore":
        """深拷贝参数值，梯度清零"""
        copy = ParamStore(self.seed)
        for name, value in self._values.items():
            copy._values[name] = value.copy()
            copy._grads[name] = np.zeros_like(value)
            copy._inits[name] = self._inits[name]
        return copy

    def num_entries(self) -> int:
        return int(sum(v.size for v in self._values.values()))


# ---------------------------------------------------------------------------
# 计算带
# ---------------------------------------------------------------------------

NodeRef = Union[int, np.integer]


class Tape:
    """
    即时求值计算带

    节点只追加；节点编号即拓扑序。label 用于在错误信息中标明实例。
    """

    def __init__(self, params: Optional[ParamStore] = None, label: str = ""):
        self.params = params if params is not None else ParamStore()
        self.label = label
        self.nodes: List[Node] = []
        self._param_nodes: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: Sequence[int] = (), attrs: Optional[Dict[str, Any]] = None) -> int:
        """记录一个原语并立即计算前向值，返回节点编号"""
        primitive = PRIMITIVES.get(kind)
        if primitive is None:
            raise ValueError(f"unknown primitive: {kind}")
        inputs = tuple(int(i) for i in inputs)
        if primitive.arity >= 0 and len(inputs) != primitive.arity:
            raise ShapeError(f"{kind} expects {primitive.arity} inputs, got {len(inputs)}")
        for idx in inputs:
            if not 0 <= idx < len(self.nodes):
                raise ValueError(f"{kind}: input node {idx} is not on the tape")
        attrs = dict(attrs or {})
        values = [self.nodes[i].value for i in inputs]
        try:
            value, cache = primitive.forward(values, attrs)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"{exc} (instance {self.label or '?'})") from None
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {kind} (instance {self.label or '?'})")
        self.nodes.append(Node(kind, inputs, value, attrs, cache))
        return len(self.nodes) - 1

    # ---- 叶子 -------------------------------------------------------------

    def const(self, value: ArrayLike) -> int:
        return self.record("const", (), {"value": np.array(value, dtype=np.float64)})

    def param(self, name: str) -> int:
        """参数叶子；同名参数在一条计算带上只记录一次"""
        if name not in self._param_nodes:
            value = self.params.value(name)
            self._param_nodes[name] = self.record("param", (), {"value": value, "name": name})
        return self._param_nodes[name]

    def lift(self, x: Union[NodeRef, ArrayLike]) -> int:
        """节点编号原样返回，数组记录为常量"""
        if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
            return int(x)
        return self.const(x)

    def value(self, node: NodeRef) -> np.ndarray:
        return self.nodes[int(node)].value

    def scalar(self, node: NodeRef) -> float:
        return float(self.nodes[int(node)].value)

    # ---- 原语快捷方法 ------------------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        return self.record("matmul", (a, b))

    def transpose(self, a: int) -> int:
        return self.record("transpose", (a,))

    def reshape(self, a: int, shape: Tuple[int, ...]) -> int:
        return self.record("reshape", (a,), {"shape": tuple(shape)})

    def add(self, a: int, b: int) -> int:
        return self.record("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self.record("sub", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self.record("mul", (a, b))

    def scale(self, a: int, factor: float) -> int:
        return self.record("scale", (a,), {"factor": float(factor)})

    def add_const(self, a: int, value: float) -> int:
        return self.record("add_const", (a,), {"value": float(value)})

    def tanh(self, a: int) -> int:
        return self.record("tanh", (a,))

    def exp(self, a: int) -> int:
        return self.record("exp", (a,))

    def log(self, a: int) -> int:
        return self.record("log", (a,))

    def sigmoid(self, a: int) -> int:
        return self.record("sigmoid", (a,))

    def relu(self, a: int) -> int:
        return self.record("relu", (a,))

    def softmax(self, a: int, axis: int = -1) -> int:
        return self.record("softmax", (a,), {"axis": axis})

    def sum(self, a: int, axis: Optional[int] = None) -> int:
        return self.record("sum", (a,), {"axis": axis})

    def concat(self, items: Sequence[int], axis: int = 0) -> int:
        return self.record("concat", tuple(items), {"axis": axis})

    def slice(self, a: int, index: Any) -> int:
        return self.record("slice", (a,), {"index": index})

    def inverse(self, a: int) -> int:
        return self.record("inverse", (a,))

    def logdet(self, a: int) -> int:
        return self.record("logdet", (a,))

    def masked_fill(self, a: int, mask: np.ndarray, fill: float) -> int:
        return self.record("masked_fill", (a,), {"mask": np.asarray(mask, dtype=bool), "fill": float(fill)})

    def gather(self, table: int, indices: Sequence[int]) -> int:
        return self.record("gather", (table,), {"indices": np.asarray(indices, dtype=np.int64)})

    def clamp(self, a: int, lo: float, hi: float) -> int:
        return self.record("clamp", (a,), {"lo": float(lo), "hi": float(hi)})

    # ---- 反向传播 -----------------------------------------------------------

    def node_gradients(self, loss: NodeRef) -> List[Optional[np.ndarray]]:
        """按严格逆序遍历，返回每个节点的梯度（不可达为 None）"""
        loss = int(loss)
        if self.nodes[loss].value.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {self.nodes[loss].value.shape}")
        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[loss] = np.ones(())
        for idx in range(loss, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            node = self.nodes[idx]
            if not node.inputs:
                continue
            values = [self.nodes[i].value for i in node.inputs]
            input_grads = PRIMITIVES[node.kind].backward(g, node, values)
            for src, ig in zip(node.inputs, input_grads):
                if ig is None:
                    continue
                ig = np.asarray(ig, dtype=np.float64)
                total = ig if grads[src] is None else grads[src] + ig
                if not np.all(np.isfinite(total)):
                    raise NonFiniteError(
                        f"NaN encountered during accumulation at {self.nodes[src].kind} "
                        f"(instance {self.label or '?'})"
                    )
                grads[src] = total
        return grads

    def gradients(self, loss: NodeRef) -> Dict[str, np.ndarray]:
        """
        计算参数梯度但不写入仓库（供并行工作线程使用）

        Returns:
            仓库中每个参数名 -> 梯度；不可达参数为零
        """
        node_grads = self.node_gradients(loss)
        out: Dict[str, np.ndarray] = {}
        for name, value in self.params.items():
            idx = self._param_nodes.get(name)
            g = node_grads[idx] if idx is not None else None
            out[name] = g.copy() if g is not None else np.zeros_like(value)
        return out

    def backward(self, loss: NodeRef) -> Dict[str, np.ndarray]:
        """反向传播并把梯度累加进参数仓库"""
        grads = self.gradients(loss)
        self.params.accumulate(grads)
        return grads


def grad_check(f: Callable[[Tape], int], store: ParamStore, step: float = 1e-5,
               names: Optional[Sequence[str]] = None) -> float:
    """
    中心差分梯度检验

    Args:
        f: 在给定计算带上构建标量损失并返回其节点编号，必须确定性
        store: 参数仓库（检验过程中临时扰动，结束时恢复）
        step: 差分步长，取值 (0, 1e-2]
        names: 只检验这些参数，默认全部

    Returns:
        最大相对误差，分母为 max(|解析|, |数值|, 1e-8)
    """
    if not 0.0 < step <= 1e-2:
        raise ValueError(f"step must be in (0, 1e-2], got {step}")

    def evaluate() -> float:
        tape = Tape(store, label="grad_check")
        value = tape.scalar(f(tape))
        if not math.isfinite(value):
            raise NonFiniteError("grad_check: f returned a non-finite value")
        return value

    tape = Tape(store, label="grad_check")
    loss = f(tape)
    if not math.isfinite(tape.scalar(loss)):
        raise NonFiniteError("grad_check: f returned a non-finite value")
    analytic = tape.gradients(loss)

    worst = 0.0
    for name in (names or store.names()):
        values = store.value(name)
        flat = values.reshape(-1)
        grad = analytic[name].reshape(-1)
        for pos in range(flat.size):
            original = flat[pos]
            flat[pos] = original + step
            plus = evaluate()
            flat[pos] = original - step
            minus = evaluate()
            flat[pos] = original
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(grad[pos]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[pos] - numeric) / denom)
    logger.debug("grad_check 完成，最大相对误差 %.3e", worst)
    return worst


@dataclass(frozen=True)
class Var:
    """计算带上节点的句柄：值随时可读，也可继续参与运算"""
    tape: Tape
    node: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.value(self.node)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape


def tape_for(*items: Any, params: Optional[ParamStore] = None, tape: Optional[Tape] = None,
             label: str = "") -> Tape:
    """优先使用输入 Var 所在的计算带，其次显式传入的计算带，否则新建"""
    for item in items:
        if isinstance(item, Var):
            if tape is not None and item.tape is not tape:
                raise ValueError("inputs live on different tapes")
            return item.tape
    if tape is not None:
        return tape
    return Tape(params, label=label)


def node_of(tape: Tape, x: Union[Var, ArrayLike]) -> int:
    """Var 取其节点，数组记录为常量"""
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("Var belongs to another tape")
        return x.node
    return tape.const(x)
