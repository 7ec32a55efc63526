from .handler import run
