"""
MNAD - Task models: frame reconstruction, future frame prediction and
reconstruction with motion cues
"""
from mnad import __version__
from mnad.model import Model

class ReconstructionModel(Model):
    """
    Reconstructs the input frame. Skip connections are disabled so that the
    output can only be produced through the memory-read bottleneck
    """
    DEFAULTS = {
        "task" : "reconstruction",
        "input_window" : 1,
        "target_index" : 0,
    }

    def __str__(self):
        return "Frame reconstruction model: %s" % __version__

class PredictionModel(Model):
    """
    Predicts the frame following a window of four frames, with U-Net skip connections
    """
    DEFAULTS = {
        "task" : "prediction",
        "input_window" : 4,
        "target_index" : 4,
    }

    def __init__(self, **options):
        # The target always follows the window so only the window length needs to be given
        if options.get("input_window", None) is not None and options.get("target_index", None) is None:
            options["target_index"] = options["input_window"]
        Model.__init__(self, **options)

    def __str__(self):
        return "Future frame prediction model (%i input frames): %s" % (self.input_window, __version__)

class MotionCueModel(Model):
    """
    Reconstructs the ninth frame of a sixteen frame window, so the
    encoder sees the motion around the target
    """
    DEFAULTS = {
        "task" : "reconstruction",
        "input_window" : 16,
        "target_index" : 8,
    }

    def __str__(self):
        return "Reconstruction model with motion cues (%i frames, target %i): %s" % (
            self.input_window, self.target_index + 1, __version__)
