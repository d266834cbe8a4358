# STCN model components
