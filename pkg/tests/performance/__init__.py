# Desk-scale physics reproductions (LATTICEMC_RUN_SLOW=1)
