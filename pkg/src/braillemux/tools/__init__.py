"""Executable clients: echo demo, pager, focus agent, raw file transfer."""
