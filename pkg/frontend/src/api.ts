/** Typed client for the detection service; the console talks only to this. */

export interface Decision {
  request_id: string;
  statistic: number;
  p_value: number;
  per_domain_p: Record<string, number>;
  alpha: number;
  reject: boolean;
  domain_used: string;
  threshold: number | null;
  interpretation: string;
}

export interface DomainEntry {
  domain: string;
  m: number;
  p_floor: number;
}

export interface DomainsPayload {
  domains: DomainEntry[];
  warnings?: string[];
}

export interface Api {
  detect(text: string, domain: string, alpha: number): Promise<Decision>;
  domains(): Promise<DomainsPayload>;
  feedback(requestId: string, agrees: boolean): Promise<{ recorded: boolean }>;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function unwrap<T>(response: Response): Promise<T> {
  if (response.ok) {
    return (await response.json()) as T;
  }
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body?.detail === "string") detail = body.detail;
  } catch {
    // keep the status text
  }
  throw new ApiError(response.status, detail);
}

export function httpApi(base: string, fetchImpl: FetchLike = fetch): Api {
  const root = base.replace(/\/$/, "");
  return {
    async detect(text, domain, alpha) {
      const response = await fetchImpl(`${root}/detect`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text, domain, alpha }),
      });
      return unwrap<Decision>(response);
    },
    async domains() {
      return unwrap<DomainsPayload>(await fetchImpl(`${root}/domains`));
    },
    async feedback(requestId, agrees) {
      const response = await fetchImpl(`${root}/feedback`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ request_id: requestId, agrees }),
      });
      return unwrap<{ recorded: boolean }>(response);
    },
  };
}
