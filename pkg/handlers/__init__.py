"""
Handlers Module Initialization

This module routes parsed command-line arguments to the command handlers
and turns their outcome into a process exit code.
"""

import logging
from pathlib import Path
from typing import Callable, Dict

from utils.error_handler import error_handler


class HandlerManager:
    """
    Command registry and dispatch
    """

    def __init__(self):
        """
        Initialize handler manager with logging
        """
        self.logger = logging.getLogger(__name__)
        self.handlers: Dict[str, Callable[..., int]] = {}

    def register_handler(self, name: str, handler: Callable[..., int]) -> None:
        """
        Register a command handler

        :param name: Command name
        :param handler: Callable taking the parsed arguments, returning an exit code
        """
        if name in self.handlers:
            self.logger.warning(f"Handler {name} already exists. Overwriting.")
        self.handlers[name] = handler
        self.logger.debug(f"Registered handler: {name}")

    def dispatch(self, name: str, args) -> int:
        """
        Run a command, mapping any error onto an exit code

        :param name: Command name
        :param args: Parsed arguments
        :return: Exit code
        """
        handler = self.handlers.get(name)
        if handler is None:
            self.logger.error(f"Unknown command: {name}")
            return error_handler.EXIT_USAGE
        try:
            return handler(args)
        except Exception as e:
            return error_handler.exit_code(e)


def _screen(args) -> int:
    from handlers.screening_handler import RunConfig, screening_handler
    return screening_handler.cmd_screen(RunConfig.from_args(args))


def _validate(args) -> int:
    from handlers.screening_handler import RunConfig, screening_handler
    return screening_handler.cmd_validate(
        RunConfig.from_args(args),
        Path(args.report),
        relax_thermal=args.relax_thermal,
        samples_out=Path(args.samples_out) if args.samples_out else None,
    )


def _table(args) -> int:
    from handlers.table_handler import table_handler
    return table_handler.cmd_table(
        [Path(p) for p in args.reports], Path(args.out_csv) if args.out_csv else None
    )


def _history(args) -> int:
    from handlers.history_handler import history_handler
    return history_handler.cmd_history(args.case_name, args.limit, args.run)


handler_manager = HandlerManager()
for _name, _handler in (('screen', _screen), ('validate', _validate),
                        ('table', _table), ('history', _history)):
    handler_manager.register_handler(_name, _handler)

__all__ = ['HandlerManager', 'handler_manager']
