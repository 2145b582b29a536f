"""Command-line entry point, scenario files and run reports."""
