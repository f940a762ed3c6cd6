"""Libraries for crafting and evaluating universal audio perturbations."""
