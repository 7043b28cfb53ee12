"""Full tracker network: backbone -> pyramid correlation -> Hough voting."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .backbone import UPSAMPLE_GEOMETRY, FeatureExtractor, check_image
from .correlation import (
    bank_size,
    depthwise_correlation,
    group_pixel_correlation,
    pyramid_feature_pooling,
    spatial_feature_selection,
)
from .tensor import ParamSet, Tensor
from .voting import (
    build_vote_field,
    refinement_shapes,
    vote_aggregation,
    vote_generation,
    vote_generation_shapes,
    vote_refinement,
)


class Network:
    def __init__(self, cfg):
        self.cfg = cfg
        self.extractor = FeatureExtractor(cfg.arch, cfg.channels, cfg.template_feat)
        self.field = build_vote_field(cfg.regions, cfg.vote_extent, cfg.ring_radii, cfg.angle_bins)
        self.dtype = np.dtype(cfg.dtype)
        h = cfg.template_feat
        if cfg.corr_mode == "pyramid":
            self.bank_size = bank_size(h, cfg.use_pyramid)
            self.corr_channels = self.bank_size * cfg.groups
        else:
            self.bank_size = None
            self.corr_channels = cfg.channels
        self.template_feat_size = self.extractor.feature_size(cfg.template_size)
        self.search_feat_size = self.extractor.feature_size(cfg.search_size)
        if self.template_feat_size < h:
            raise ValueError(f"template feature {self.template_feat_size} smaller than crop {h}")

        geom = self.extractor.geometry
        n = self.search_feat_size
        if cfg.corr_mode == "depthwise":
            geom = geom.then(1, (h - 1) / 2)
            n = n - h + 1
        for _ in range(3):
            geom = geom.then(1, 1.0)
        n -= 6
        self.voting_size = n
        if cfg.refine_upsample:
            geom = geom.then(*UPSAMPLE_GEOMETRY)
            n *= 2
        self.geometry = geom
        self.map_size = n

    # -- parameters --------------------------------------------------------

    def param_shapes(self):
        cfg = self.cfg
        shapes = OrderedDict(self.extractor.param_shapes())
        c = cfg.channels
        hid = cfg.attention_hidden or c
        if cfg.use_attention and cfg.corr_mode == "pyramid":
            shapes["attention.conv1.weight"] = (1, 1, c, hid)
            shapes["attention.conv1.bias"] = (hid,)
            shapes["attention.conv2.weight"] = (1, 1, hid, c)
            shapes["attention.conv2.bias"] = (c,)
        for name, k, cin, cout in vote_generation_shapes(self.corr_channels, cfg.gen_widths, cfg.regions):
            shapes[name + ".weight"] = (k, k, cin, cout)
            shapes[name + ".bias"] = (cout,)
        for name, cin, cout in refinement_shapes(cfg.regions, cfg.use_grid, cfg.refine_upsample):
            shapes[name + ".weight"] = (1, 1, cin, cout)
            shapes[name + ".bias"] = (cout,)
        shapes["head.bias"] = (2,)
        return shapes

    def init_params(self, seed=0):
        cfg = self.cfg
        rng = np.random.default_rng(seed)
        params = ParamSet(cfg.dtype)
        for name, shape in self.param_shapes().items():
            if name == "head.bias":
                value = np.full(shape, cfg.head_bias)
            elif name.endswith(".bias"):
                value = np.zeros(shape)
            else:
                fan_in = shape[0] * shape[1] * shape[2]
                if cfg.init == "gauss" and not name.startswith("backbone."):
                    std = cfg.init_std
                else:
                    std = np.sqrt(2.0 / fan_in)
                value = rng.normal(0.0, std, size=shape)
            params.add(name, value)
        return params

    # -- forward -----------------------------------------------------------

    def as_input(self, images):
        return images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))

    def template_branch(self, template, params):
        """Template features reduced to whatever the correlation consumes."""
        template = self.as_input(template)
        check_image(template, self.cfg.template_size)
        ft = self.extractor.template(template, params)
        parts = {"F_T": ft}
        parts["kernel"] = self.template_kernel(ft, params, parts)
        return parts

    def template_kernel(self, ft, params, parts=None):
        """Correlation kernel from a template feature: the raw feature for
        depth-wise correlation, else the (attended) pyramid bank."""
        cfg = self.cfg
        parts = {} if parts is None else parts
        if cfg.corr_mode == "depthwise":
            return ft
        if cfg.use_attention:
            fta, attn = spatial_feature_selection(ft, params)
            parts.update(F_TA=fta, A=attn)
        else:
            fta = ft
        bank = pyramid_feature_pooling(fta, cfg.use_pyramid)
        parts["bank"] = bank
        return bank.vectors

    def search_branch(self, search, params):
        search = self.as_input(search)
        check_image(search, self.cfg.search_size)
        return self.extractor.search(search, params)

    def head(self, kernel, fs, params, parts=None):
        cfg = self.cfg
        parts = {} if parts is None else parts
        if cfg.corr_mode == "depthwise":
            g = depthwise_correlation(kernel, fs)
        else:
            g = group_pixel_correlation(kernel, fs, cfg.groups)
        fv = vote_generation(g, params)
        fr = vote_refinement(fv, params, cfg.use_grid, cfg.refine_upsample)
        tl, br = vote_aggregation(fr, self.field)
        logits = ops.add(ops.concat_channels([tl, br]), params["head.bias"])
        parts.update(G=g, F_V=fv, F_R=fr, top_left=tl, bottom_right=br, logits=logits)
        return logits

    def forward(self, template, search, params, parts=None):
        """Corner logits ``(..., S, S, 2)`` for template/search image batches."""
        parts = {} if parts is None else parts
        t = self.template_branch(template, params)
        parts.update(t)
        fs = self.search_branch(search, params)
        parts["F_S"] = fs
        return self.head(t["kernel"], fs, params, parts)

    def describe(self):
        cfg = self.cfg
        return {
            "template_feature": self.template_feat_size,
            "template_crop": cfg.template_feat,
            "search_feature": self.search_feat_size,
            "bank_size": self.bank_size,
            "correlation_channels": self.corr_channels,
            "voting_channels": 2 * cfg.regions,
            "voting_size": self.voting_size,
            "map_size": self.map_size,
            "stride": self.geometry.stride,
            "offset": self.geometry.offset,
        }
