# Fast closed-form anchors and estimator oracles
