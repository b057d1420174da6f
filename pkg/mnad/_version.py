__version__ = '0.0.0'
__timestamp__ = 'unknown'
