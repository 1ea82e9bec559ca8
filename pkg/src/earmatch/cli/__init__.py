"""Command-line pipeline: every processing stage as a subcommand."""
