"""scikit-learn style front end for the codec."""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .container import CompressReport, compress_model, decompress
from .scene import AnchorSet
from .trainer import USRO, TrainConfig, fit


class AnchorCodec(TransformerMixin, BaseEstimator):
    """Learns an entropy model for one anchor set and codes it.

    ``fit`` trains the planes and MLPs; ``transform`` returns the anchors as
    the decoder will see them (fp16 positions, quantized attributes);
    ``compress`` produces the container bytes.
    """

    def __init__(self, lambda_r=0.01, lambda_tri=10.0, ardo_interval=4, sampling_mode=USRO,
                 sample_fraction=0.05, steps=2000, lr_planes=1e-2, lr_mlp=1e-3, seed=0,
                 base_resolution=None, log_path=None):
        self.lambda_r = lambda_r
        self.lambda_tri = lambda_tri
        self.ardo_interval = ardo_interval
        self.sampling_mode = sampling_mode
        self.sample_fraction = sample_fraction
        self.steps = steps
        self.lr_planes = lr_planes
        self.lr_mlp = lr_mlp
        self.seed = seed
        self.base_resolution = base_resolution
        self.log_path = log_path

    def _config(self) -> TrainConfig:
        return TrainConfig(
            lambda_r=self.lambda_r,
            lambda_tri=self.lambda_tri,
            ardo_interval=self.ardo_interval,
            sampling_mode=self.sampling_mode,
            sample_fraction=self.sample_fraction,
            steps=self.steps,
            lr_planes=self.lr_planes,
            lr_mlp=self.lr_mlp,
            seed=self.seed,
            base_resolution=self.base_resolution,
        )

    def fit(self, X: AnchorSet, y=None):
        if not isinstance(X, AnchorSet):
            raise TypeError("AnchorCodec.fit expects an AnchorSet")
        self.model_ = fit(X, self._config(), log_path=self.log_path)
        self.n_anchors_ = len(X)
        return self

    def _code(self, X: AnchorSet) -> tuple[bytes, CompressReport]:
        check_is_fitted(self, "model_")
        return compress_model(self.model_, X)

    def compress(self, X: AnchorSet) -> bytes:
        return self._code(X)[0]

    def transform(self, X: AnchorSet) -> AnchorSet:
        return self._code(X)[1].reconstructed

    def report(self, X: AnchorSet) -> CompressReport:
        return self._code(X)[1]

    @staticmethod
    def decompress(data: bytes, parallel_planes: bool = False) -> AnchorSet:
        return decompress(data, parallel_planes=parallel_planes)[0]


__all__ = ["AnchorCodec", "NotFittedError"]
