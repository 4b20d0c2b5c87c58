"""Speech-driven lip animation and semi-supervised visual speech recognition.

The package is organized around three stages that share one media space
(96x96 grayscale clips at 25 fps, 200 ms speech windows at the frame rate):

- ``lipgen``: a speech-conditioned frame generator with frame and sequence
  discriminators, trained adversarially with reconstruction and optional
  recognizer-based feedback.
- ``synthgen``: turning a trained generator plus a speech-only corpus and a
  face pool into a synthetic labeled video dataset.
- ``vsr``: the visual speech recognizer (3D-conv front-end, conformer
  encoder, transformer decoder) trained on mixtures of real and synthetic
  clips and scored by word error rate.
"""

__version__ = "0.1.0"
