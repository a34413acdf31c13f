"""
Model Context Protocol (MCP) server exposing the KOSS experiments as tools.

The tools wrap the theory-validation experiments (Riccati gain convergence,
SDU frequency response) and the selective-copying generator so that
MCP-compatible clients can run them without the CLI.
"""
from mcp.server.fastmcp import FastMCP
import argparse
from koss_ssm.utils.logging import logger
from koss_ssm.services.tool_service import generate_copying, riccati_convergence, sdu_response_summary
from koss_ssm.config import DEFAULT_PORT, DEFAULT_CONNECTION_TYPE, RICCATI_DT, RICCATI_T_END, SDU_OMEGA_CUT
from koss_ssm import __version__


def create_mcp_server(port=DEFAULT_PORT):
    """
    Create and configure the Model Context Protocol server.

    Args:
        port: Port number to run the server on

    Returns:
        Configured MCP server instance
    """
    mcp = FastMCP("KossExperimentService", port=port)

    register_tools(mcp)

    return mcp


def register_tools(mcp):
    """
    Register the experiment tools on ``mcp`` with @mcp.tool().

    Args:
        mcp: The MCP server instance
    """
    @mcp.tool()
    async def riccati_convergence_tool(dt: float = RICCATI_DT, t_end: float = RICCATI_T_END):
        """
        Check that the Kalman gain of the two-state test system converges to its steady state.

        The Riccati equation is integrated with RK4 from five positive semi-definite
        initial covariances and every final gain is compared with the gain of the
        algebraic Riccati solution.

        Args:
            dt: Integration step (default 0.01)
            t_end: Integration horizon (default 20)

        Returns:
            Dict with 'k_inf', 'per_init' rows, 'max_abs_error' and 'terminal_rate', or 'error'
        """
        return await riccati_convergence(dt, t_end)

    @mcp.tool()
    async def sdu_response_tool(seed: int = 0, noise_std: float = 1.0, omega_cut: float = SDU_OMEGA_CUT):
        """
        Compare high-frequency noise of the spectral and central-difference derivatives.

        Args:
            seed: Noise seed
            noise_std: Standard deviation of the additive Gaussian noise
            omega_cut: Cut-off of the soft damping mask in rad per time unit

        Returns:
            Summed top-quartile spectrum magnitude of both derivatives, or 'error'
        """
        return await sdu_response_summary(seed, noise_std, omega_cut)

    @mcp.tool()
    async def generate_copying_tool(seq_len: int = 256, n_data_tokens: int = 8,
                                    interference_ratio: float = 0.0, seed: int = 0):
        """
        Generate one context-aware selective copying sequence.

        Token ids: 0 noise, 1 distractor-context marker, 2 recall marker, 3 and up data.

        Args:
            seq_len: Sequence length including the recall tail
            n_data_tokens: Number of tokens to recall
            interference_ratio: Distractors per data token, between 0 and 0.5
            seed: Generator seed

        Returns:
            Dict with 'tokens', 'targets', 'recall_start' and 'n_distractors', or 'error'
        """
        return await generate_copying(seq_len, n_data_tokens, interference_ratio, seed)

    @mcp.tool()
    def server_status():
        """
        Check if the Model Context Protocol server is running.

        Returns:
            A status message indicating the server is online
        """
        return {"status": "online", "message": "KOSS experiment server is running", "version": __version__}

    logger.debug("Model Context Protocol tools registered")


def main():
    """
    Main entry point for the KOSS experiment MCP server.
    """
    parser = argparse.ArgumentParser(description="Model Context Protocol KOSS Experiment Service")
    parser.add_argument("--connection_type", type=str, default=DEFAULT_CONNECTION_TYPE,
                        choices=["http", "stdio"], help="Connection type (http or stdio)")
    parser.add_argument("--port", type=int, default=DEFAULT_PORT,
                        help=f"Port to run the server on (default: {DEFAULT_PORT})")
    args = parser.parse_args()

    mcp = create_mcp_server(port=args.port)

    server_type = "sse" if args.connection_type == "http" else "stdio"

    logger.info(f"🚀 Starting KOSS experiment service on port {args.port} with {args.connection_type} connection")
    mcp.run(server_type)


if __name__ == "__main__":
    main()
