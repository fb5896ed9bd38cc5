# Small ensembles and command-line runs
