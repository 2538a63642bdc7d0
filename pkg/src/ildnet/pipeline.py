"""End-to-end experiment steps shared by the CLI and the acceptance suite.

Every step is a pure function of its inputs and seeds. Models carry what
evaluation needs (input statistics, label mapping, operating thresholds)
so a checkpoint alone reproduces its scores.
"""
from dataclasses import dataclass, field

import numpy as np

from . import container, evalkit, fvpool, nn
from . import rng as rngmod
from .errors import DataError, ParameterError
from .preprocess import DEFAULT_WINDOWS, AttenuationWindow, ChannelStats, make_inputs
from .synthdata import CLASS_NAMES, LabelMapping, binary_labels, counts_matrix, map_counts_to_labels

HEAD_ALIASES = {"mlc": "multilabel_logistic", "l2": "regression_l2", "sl1": "regression_smooth_l1"}


def resolve_head(name):
    if name in HEAD_ALIASES:
        return HEAD_ALIASES[name]
    if name in nn.HEADS:
        return name
    raise ParameterError(f"unknown head {name!r}; choose from mlc, l2, sl1")


@dataclass
class Split:
    train: np.ndarray
    test: np.ndarray
    folds: list


def fold_split(slices, k=5, fold=0, seed=0):
    if not 0 <= int(fold) < int(k):
        raise ParameterError(f"fold must lie in [0, {k - 1}], got {fold}")
    pids = [s.patient_id for s in slices]
    folds = evalkit.patient_folds(pids, k, seed)
    of = evalkit.slice_folds(pids, folds)
    return Split(np.flatnonzero(of != fold), np.flatnonzero(of == fold), folds)


@dataclass
class HolisticModel:
    net: object
    stats: ChannelStats
    head: str
    mapping: LabelMapping
    input_size: int
    normalizer: float
    class_weights: np.ndarray = None
    thresholds: np.ndarray = None
    history: list = field(default_factory=list)
    windows: tuple = DEFAULT_WINDOWS

    def inputs(self, slices):
        x = make_inputs(slices, self.input_size, self.windows, dtype=np.float64)
        return self.stats.apply(x).astype(self.net.dtype)

    def scores(self, slices, batch_size=64):
        return nn.predict(self.net, self.inputs(slices), batch_size).astype(np.float64)

    def truth(self, slices):
        return binary_labels(counts_matrix(slices), self.mapping.truth_threshold)

    def meta(self):
        return {
            "head": self.head, "mapping": str(self.mapping), "mapping_T": self.mapping.T,
            "input_size": self.input_size, "normalizer": self.normalizer,
            "stats_mean": [float(v) for v in self.stats.mean], "stats_std": [float(v) for v in self.stats.std],
            "class_weights": None if self.class_weights is None else [float(v) for v in self.class_weights],
            "thresholds": None if self.thresholds is None else [float(v) for v in self.thresholds],
            "history": [float(v) for v in self.history],
            "windows": [[w.hu_low, w.hu_high] for w in self.windows],
        }

    @classmethod
    def from_meta(cls, net, meta):
        mapping = LabelMapping.parse(meta["mapping"], meta.get("mapping_T", 6000))
        return cls(net, ChannelStats(np.array(meta["stats_mean"]), np.array(meta["stats_std"])),
                   meta["head"], mapping, int(meta["input_size"]), float(meta["normalizer"]),
                   None if meta.get("class_weights") is None else np.array(meta["class_weights"]),
                   None if meta.get("thresholds") is None else np.array(meta["thresholds"]),
                   list(meta.get("history", [])),
                   tuple(AttenuationWindow(*w) for w in meta.get("windows", [])) or DEFAULT_WINDOWS)


def make_targets(counts, head, mapping, normalizer):
    if head == "multilabel_logistic":
        if mapping.kind != "step":
            raise ParameterError("the multi-label classification head needs a step mapping")
        return 2.0 * map_counts_to_labels(counts, mapping) - 1.0
    y = map_counts_to_labels(counts, mapping)
    if mapping.kind == "identity":
        y = y / normalizer
    return y


def train_holistic(slices, train_idx, head="mlc", mapping=None, balance=False, opt=None,
                   input_size=64, normalizer=None, net_spec=None, callback=None, windows=DEFAULT_WINDOWS):
    head = resolve_head(head)
    train_slices = [slices[i] for i in train_idx]
    if not train_slices:
        raise DataError("no training slices")
    h, w = train_slices[0].mask.shape
    mapping = mapping or LabelMapping("step")
    normalizer = float(normalizer or h * w)
    opt = opt or nn.OptConfig()
    x = make_inputs(train_slices, input_size, windows, dtype=np.float64)
    stats = ChannelStats.fit(x)
    x = stats.apply(x).astype(opt.dtype)
    counts = counts_matrix(train_slices)
    truth = binary_labels(counts, mapping.truth_threshold)
    y = make_targets(counts, head, mapping, normalizer)
    beta = nn.class_balance_weights(nn.ClassStats.from_labels(truth)) if balance else None
    loss = nn.LossSpec(head, beta)
    spec = net_spec or nn.desk_spec(input_size)
    result = nn.train(x, y, spec, loss, opt, callback=callback)
    model = HolisticModel(result.net, stats, head, mapping, input_size, normalizer, beta, None,
                          result.history, tuple(windows))
    train_scores = nn.predict(result.net, x).astype(np.float64)
    model.thresholds = evalkit.choose_thresholds(truth, train_scores)
    return model


def save_holistic(path, model, extra=None):
    meta = model.meta()
    meta.update(extra or {})
    nn.save_network(path, model.net, meta)


def load_holistic(path, dtype=np.float32):
    net, meta = nn.load_network(path, dtype)
    return HolisticModel.from_meta(net, meta)


# --------------------------------------------------------------------------
# Fisher-vector pipeline


@dataclass
class FvModel:
    base: HolisticModel
    layer: str
    gmm: object
    pca: object
    linear: object
    improved: bool = True
    target_mapping: LabelMapping = None
    thresholds: np.ndarray = None

    def encode(self, slices, batch_size=32):
        return encode_slices(self.base, slices, self.layer, self.gmm, self.improved, batch_size)

    def scores(self, slices):
        feats = fvpool.pca_project(self.pca, self.encode(slices))
        return fvpool.mvregress_predict(self.linear, feats)

    def truth(self, slices):
        return self.base.truth(slices)


def _descriptor_batches(model, slices, layer, batch_size):
    if layer not in model.net.spec.names:
        raise KeyError(f"unknown layer {layer!r}; available: {', '.join(model.net.spec.names)}")
    for i in range(0, len(slices), batch_size):
        x = model.inputs(slices[i:i + batch_size])
        _, cache = nn.forward(model.net, x)
        yield fvpool.extract_descriptors(cache, layer)


def encode_slices(model, slices, layer, gmm, improved=True, batch_size=32):
    out = []
    for sets in _descriptor_batches(model, slices, layer, batch_size):
        out.extend(fvpool.fv_encode(d, gmm, improved) for d in sets)
    return np.array(out)


def fit_fv(model, slices, train_idx, layer="conv1", M=32, pca_dim=512, ridge=0.1, seed=0,
           target_mapping=None, max_descriptors=200_000, improved=True, batch_size=32):
    """GMM on sampled descriptors, FV encoding, PCA and linear regression."""
    train_slices = [slices[i] for i in train_idx]
    if len(train_slices) < 2:
        raise DataError("need at least two training slices")
    rng = rngmod.stream(seed, "fv-sample")
    sampled = []
    per_image = None
    for sets in _descriptor_batches(model, train_slices, layer, batch_size):
        for d in sets:
            if per_image is None:
                per_image = max(1, min(len(d.vectors), -(-max_descriptors // len(train_slices))))
            k = min(per_image, len(d.vectors))
            sampled.append(d.vectors[np.sort(rng.choice(len(d.vectors), k, replace=False))])
    gmm = fvpool.gmm_fit(np.concatenate(sampled), M, seed=seed, max_samples=max_descriptors)
    feats = encode_slices(model, train_slices, layer, gmm, improved, batch_size)
    p = min(int(pca_dim), feats.shape[0] - 1, feats.shape[1])
    pca = fvpool.pca_fit(feats, p)
    proj = fvpool.pca_project(pca, feats)
    mapping = target_mapping or model.mapping
    counts = counts_matrix(train_slices)
    y = map_counts_to_labels(counts, mapping)
    if mapping.kind == "identity":
        y = y / model.normalizer
    linear = fvpool.mvregress_fit(proj, y, ridge)
    fv = FvModel(model, layer, gmm, pca, linear, improved, mapping)
    truth = binary_labels(counts, model.mapping.truth_threshold)
    fv.thresholds = evalkit.choose_thresholds(truth, fvpool.mvregress_predict(linear, proj))
    return fv


def save_fv(path, fv, extra=None):
    base = fv.base
    arrays = [(f"net.{base.net.spec.names[i]}.{k}", a) for i, k, a in base.net.flat_params()]
    arrays += [("gmm.means", fv.gmm.means), ("gmm.variances", fv.gmm.variances), ("gmm.weights", fv.gmm.weights),
               ("pca.mean", fv.pca.mean), ("pca.basis", fv.pca.basis), ("linear.weights", fv.linear.weights),
               ("thresholds", fv.thresholds)]
    meta = {"base": base.meta(), "spec": base.net.spec.to_dict(), "layer": fv.layer, "improved": fv.improved,
            "target_mapping": str(fv.target_mapping), "gmm_log_likelihoods": fv.gmm.log_likelihoods,
            "gmm_warnings": fv.gmm.warnings}
    meta.update(extra or {})
    container.save(path, "fvmodel", arrays, meta)


def load_fv(path, dtype=np.float32):
    meta, arrays = container.load(path, "fvmodel")
    spec = nn.NetworkSpec.from_dict(meta["spec"])
    params = []
    for layer, name in zip(spec.layers, spec.names):
        params.append({k: arrays[f"net.{name}.{k}"] for k in ("W", "b") if f"net.{name}.{k}" in arrays})
    base = HolisticModel.from_meta(nn.Network(spec, params, dtype), meta["base"])
    gmm = fvpool.GmmModel(arrays["gmm.means"], arrays["gmm.variances"], arrays["gmm.weights"],
                          meta.get("gmm_log_likelihoods", []), meta.get("gmm_warnings", []))
    mapping = LabelMapping.parse(meta["target_mapping"], base.mapping.T)
    return FvModel(base, meta["layer"], gmm, fvpool.PcaModel(arrays["pca.mean"], arrays["pca.basis"]),
                   fvpool.LinearModel(arrays["linear.weights"]), bool(meta["improved"]), mapping,
                   arrays["thresholds"])


def evaluate_model(model, slices, idx):
    test = [slices[i] for i in idx]
    if not test:
        raise DataError("no evaluation slices")
    return evalkit.evaluate(model.truth(test), model.scores(test), model.thresholds, CLASS_NAMES)
