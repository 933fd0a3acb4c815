"""MCP client tests for DigiKey MCP server."""
