"""sessionguard: post-session attack detection for LLM-agent tool-call traffic"""

__version__ = "0.1.0"
