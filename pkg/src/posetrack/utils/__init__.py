"""
Shared helpers for posetrack: errors, configuration, validators and types.
"""
