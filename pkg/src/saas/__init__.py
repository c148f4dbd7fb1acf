"""Speed as a supervisor: semi-supervised learning by maximizing training speed."""
