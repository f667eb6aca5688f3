"""Unrolled cascade network: layers, model, optimizer and training loop."""
