import logging
from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn as nn

from priorrg.config import RunConfig
from priorrg.corpus.dataset import StudyBatch
from priorrg.corpus.vocab import EOS_ID, NON_GENERABLE_IDS
from priorrg.modeling.alf import LayerFusion
from priorrg.modeling.alignment import (Temperature, alignment_loss, global_pool, match_matrix, report_global,
                                        similarity_logits)
from priorrg.modeling.decoding import GenerationResult, beam_search, greedy_decode, model_step
from priorrg.modeling.encoders import TextEncoder, VisionEncoder
from priorrg.modeling.generator import ReportDecoder
from priorrg.modeling.perceiver import CoarseToFineFusion, LatentBundle, assemble_prefix
from priorrg.modeling.stf import SpatiotemporalFusion

logger = logging.getLogger(__name__)

# Modules trained in Stage 1 and carried into Stage 2
SHARED_MODULES = ("vision", "text", "stf", "fusion", "temperature")
DECODER_MODULE = "generator"


@dataclass
class AlignmentOutput:
    v_g: torch.Tensor
    t_g: torch.Tensor
    p_i2r: torch.Tensor
    p_r2i: torch.Tensor
    q: torch.Tensor
    loss: torch.Tensor


class PriorRGModel(nn.Module):
    """Both training stages over one set of modules"""

    def __init__(self, config: RunConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vision = VisionEncoder(config)
        self.text = TextEncoder(config, vocab_size)
        self.stf = SpatiotemporalFusion(config)
        self.fusion = CoarseToFineFusion(config)
        self.temperature = Temperature(config.init_inv_tau)
        self.alf = LayerFusion(config)
        self.generator = ReportDecoder(config, vocab_size)
        if config.freeze_vision:
            self.vision.freeze_backbone()

    def spatiotemporal(self, batch: StudyBatch) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """V_st and the current image's encoder states"""
        v_cur, states = self.vision(batch.current, batch.view)
        if not bool(batch.has_prior.any()):
            return self.stf(v_cur), states.layer_states
        v_pri, _ = self.vision(batch.prior, batch.prior_view)
        return self.stf(v_cur, v_pri, batch.has_prior), states.layer_states

    def bundle(self, batch: StudyBatch, stage: int) -> LatentBundle:
        v_st, layer_states = self.spatiotemporal(batch)
        context = self.text.encode(batch.context_ids, batch.context_mask, "clinical_context")
        if stage == 1:
            return self.fusion(context.tokens, context.mask, v_st, stage=1)

        states = layer_states if self.config.use_hidden_states else layer_states[-1:]
        v_hier = self.alf(states, self.stf.temporal.current)
        order = "fine2coarse" if self.config.fusion_variant == "fine2coarse" else "coarse2fine"
        return self.fusion(context.tokens, context.mask, v_st, v_hier, stage=2, order=order)

    # Stage 1

    def image_embedding(self, batch: StudyBatch) -> torch.Tensor:
        bundle = self.bundle(batch, stage=1)
        return global_pool(bundle.t_bar_c, bundle.v_bar_st)

    def report_embedding(self, batch: StudyBatch) -> torch.Tensor:
        report = self.text.encode(batch.report_ids, batch.report_mask, "report")
        return report_global(report.tokens, report.mask)

    def align(self, batch: StudyBatch) -> AlignmentOutput:
        v_g = self.image_embedding(batch)
        t_g = self.report_embedding(batch)
        p_i2r, p_r2i = similarity_logits(v_g, t_g, self.temperature.inv_tau)
        q = match_matrix(batch.report_keys)
        return AlignmentOutput(v_g, t_g, p_i2r, p_r2i, q, alignment_loss(p_i2r, p_r2i, q))

    # Stage 2

    def prefix(self, batch: StudyBatch) -> Tuple[torch.Tensor, torch.Tensor]:
        return assemble_prefix(self.bundle(batch, stage=2), self.config.fusion_variant)

    def generation_loss(self, batch: StudyBatch) -> torch.Tensor:
        prefix, segments = self.prefix(batch)
        return self.generator.generation_loss(prefix, segments, batch.target_ids)

    @torch.no_grad()
    def generate(self, batch: StudyBatch, beam_size: int = None, greedy: bool = False) -> List[GenerationResult]:
        beam_size = beam_size or self.config.beam_size
        prefix, segments = self.prefix(batch)
        results = []
        for row in range(len(batch)):
            step = model_step(self.generator, prefix[row:row + 1], segments)
            if greedy:
                result = greedy_decode(step, self.generator.vocab_size, EOS_ID, self.config.max_new_tokens,
                                       banned=NON_GENERABLE_IDS)
            else:
                result = beam_search(step, self.generator.vocab_size, EOS_ID, beam_size,
                                     self.config.max_new_tokens, banned=NON_GENERABLE_IDS)
            results.append(result)
        return results
