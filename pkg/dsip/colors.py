"""
Console styles for run reports, one per kind of message.
"""
from colorama import Fore, Style


def _paint(color: str, text: str) -> str:
    return f"{color}{text}{Style.RESET_ALL}"


def failure(text: str) -> str:
    """
    Style a message about a run that could not finish: config errors,
    solver failures, missing files.

    Args:
        text: The message

    Returns:
        The message in red
    """
    return _paint(Fore.RED, text)


def caution(text: str) -> str:
    """
    Style a message about a run that finished with a weaker guarantee,
    such as a subproblem at max_iter or a stop at max_rounds.

    Args:
        text: The message

    Returns:
        The message in yellow
    """
    return _paint(Fore.YELLOW, text)


def skipped(text: str) -> str:
    """Style a step that was switched off in the config (light magenta)."""
    return _paint(Fore.LIGHTMAGENTA_EX, text)


def agent(index: int) -> str:
    """
    Label a 0-based agent index the way users count agents.

    Args:
        index: The agent index

    Returns:
        "agent N", N = index + 1, in bold light cyan
    """
    return _paint(Style.BRIGHT + Fore.LIGHTCYAN_EX, f"agent {index + 1}")


def value(text: str) -> str:
    """Style a reported number or vector (green)."""
    return _paint(Fore.GREEN, text)


def verdict(passed: bool) -> str:
    """Green PASS or red FAIL."""
    return value("PASS") if passed else failure("FAIL")
