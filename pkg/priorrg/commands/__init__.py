"""One entry point per pipeline step; each returns the path of its primary artifact."""

from priorrg.commands.data import cmd_synth
from priorrg.commands.inference import cmd_evaluate, cmd_generate, cmd_retrieve
from priorrg.commands.training import cmd_finetune, cmd_pretrain

COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "retrieve": cmd_retrieve,
}

__all__ = ["COMMANDS", "cmd_synth", "cmd_pretrain", "cmd_finetune", "cmd_generate", "cmd_evaluate", "cmd_retrieve"]
