"""Desk-scale workbench for flow-matching imitation with a variational latent
bottleneck and online latent-perturbation fine-tuning.

Subpackage map:

- ``nets``, ``optim``, ``dists``, ``gradcheck``, ``checkpoint``: numpy function
  approximators (MLP forward/backward, Adam, tanh-squashed Gaussian heads,
  finite-difference gradient checking, binary parameter serialization).
- ``envs``: 2D reach/push environments, scripted bimodal experts, demonstration
  datasets.
- ``flow``: chunked flow-matching policy (schedule, losses, Euler sampler).
- ``vib``: variational information bottleneck on the conditioning embedding.
- ``offline``: combined offline training loop and latent export.
- ``finetune``: SAC fine-tuning that perturbs the bottleneck latent of a frozen
  base policy.
- ``baselines``: comparison steering interfaces sharing the same SAC core.
- ``diagnostics``: smoothness, Mahalanobis OOD, decoded displacement,
  policy evaluation.
- ``config``, ``cli``: experiment configuration and the ``zprl`` command line.
"""

__version__ = "0.1.0"
