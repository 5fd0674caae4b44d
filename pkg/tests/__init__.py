"""Tests for the Kraichnan flow lab.

Test modules:
- test_covariance.py, test_noise.py: Covariance constants and noise slices
- test_spde.py, test_particles.py, test_qpde.py: The three numerical views of the flow
- test_regime.py: Phase classification and schedules
- test_config.py, test_coordinator.py, test_persistence.py: Config, worker pool and outputs
- test_experiments.py, test_cli.py: Experiment kinds and the lab command
- test_acceptance.py: Desk-scale scaling checks (marked slow)
"""
