"""
MNAD - Built-in task models
"""
