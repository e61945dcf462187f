from .commands import build_parser, dispatch, init_commands

__all__ = ['build_parser', 'dispatch', 'init_commands']
