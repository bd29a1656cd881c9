"""Graph-text contrastive pretraining of molecular graph encoders with calibrated LLM descriptions."""
