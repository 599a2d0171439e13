/* 99-wide-char string wcscpy'd into a 50-wide-char stack buffer. */
#include <wchar.h>

#include "io.h"

static void bad(void)
{
    wchar_t * data;
    wchar_t dataBadBuffer[50];
    data = dataBadBuffer;
    data[0] = L'\0';
    {
        wchar_t source[100];
        wmemset(source, L'C', 100-1);
        source[100-1] = L'\0';
        wcscpy(data, source);
        printWLine(data);
    }
}

int main(void)
{
    printLine("Calling bad()...");
    bad();
    printLine("Finished bad()");
    return 0;
}
