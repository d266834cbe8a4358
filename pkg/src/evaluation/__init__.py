# Evaluation metrics and sampling protocol
