"""Slotted random-access simulator with two-phase successive interference cancellation."""
