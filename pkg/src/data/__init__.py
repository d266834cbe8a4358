# Motion data module
