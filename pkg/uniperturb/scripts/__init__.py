"""Command line tools for crafting and evaluating universal perturbations."""
